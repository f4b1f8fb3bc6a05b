//! Recorded request/response exchanges and a local server that replays them.
//!
//! A fixture directory holds `exchange_NNNN.json` files and a `manifest.json`
//! listing each file with its SHA-256. Loading fails if any file no longer
//! matches its checksum.
//!
//! An exchange with a recorded request answers only a byte-equivalent JSON
//! request. Exchanges without one are scripted and answer whatever arrives,
//! in file order.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::wire::{ChatRequest, ChatResponse};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("fixture I/O on `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed fixture file `{}`: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("checksum mismatch for fixture file `{file}`: manifest {expected}, actual {actual}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("fixture directory `{}` already contains a manifest", .0.display())]
    AlreadyRecorded(PathBuf),
    #[error("cannot start fixture server: {0}")]
    Server(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<serde_json::Value>,
    pub response: ChatResponse,
}

impl Exchange {
    pub fn scripted(response: ChatResponse) -> Self {
        Self { request: None, response }
    }

    /// A scripted tool call running `code`.
    pub fn code(call_id: &str, code: &str) -> Self {
        Self::scripted(ChatResponse::tool_call(call_id, code))
    }
}

/// Scripted turns for one episode that sleeps `wait_s` and then checks once.
pub fn wait_then_check(episode: usize, wait_s: f64) -> Vec<Exchange> {
    vec![
        Exchange::code(&format!("ep{episode}_sleep"), &format!("import time; time.sleep({wait_s})")),
        Exchange::code(&format!("ep{episode}_check"), "check()"),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub exchanges: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Appends exchanges to a fixture directory.
pub struct FixtureWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl FixtureWriter {
    pub fn create(dir: &Path) -> Result<Self, FixtureError> {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        if dir.join(MANIFEST).exists() {
            return Err(FixtureError::AlreadyRecorded(dir.to_path_buf()));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest::default(),
        })
    }

    pub fn record(&mut self, request: Option<&ChatRequest>, response: &ChatResponse) -> Result<(), FixtureError> {
        let exchange = Exchange {
            request: request.map(|r| serde_json::to_value(r).expect("request serializes")),
            response: response.clone(),
        };
        self.push(&exchange)
    }

    pub fn push(&mut self, exchange: &Exchange) -> Result<(), FixtureError> {
        let file = format!("exchange_{:04}.json", self.manifest.exchanges.len());
        let bytes = serde_json::to_vec_pretty(exchange).expect("exchange serializes");
        let path = self.dir.join(&file);
        std::fs::write(&path, &bytes).map_err(io(&path))?;
        self.manifest.exchanges.push(ManifestEntry {
            file,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes the manifest; returns how many exchanges it lists.
    pub fn finish(self) -> Result<usize, FixtureError> {
        let path = self.dir.join(MANIFEST);
        let bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&path, bytes).map_err(io(&path))?;
        Ok(self.manifest.exchanges.len())
    }
}

/// Writes a complete fixture directory in one go.
pub fn write_fixture(dir: &Path, exchanges: &[Exchange]) -> Result<(), FixtureError> {
    let mut writer = FixtureWriter::create(dir)?;
    for e in exchanges {
        writer.push(e)?;
    }
    writer.finish().map(|_| ())
}

/// Reads and checksum-verifies a fixture directory.
pub fn load_fixture(dir: &Path) -> Result<Vec<Exchange>, FixtureError> {
    let manifest_path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| FixtureError::Malformed {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    manifest
        .exchanges
        .iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let bytes = std::fs::read(&path).map_err(io(&path))?;
            let actual = sha256_hex(&bytes);
            if actual != entry.sha256 {
                return Err(FixtureError::ChecksumMismatch {
                    file: entry.file.clone(),
                    expected: entry.sha256.clone(),
                    actual,
                });
            }
            serde_json::from_slice(&bytes).map_err(|e| FixtureError::Malformed {
                path,
                message: e.to_string(),
            })
        })
        .collect()
}

struct Slot {
    exchange: Exchange,
    used: bool,
}

fn take_reply(slots: &Mutex<Vec<Slot>>, body: &serde_json::Value) -> Option<ChatResponse> {
    let mut slots = slots.lock().expect("fixture lock");
    let pos = slots
        .iter()
        .position(|s| !s.used && s.exchange.request.as_ref() == Some(body))
        .or_else(|| slots.iter().position(|s| !s.used && s.exchange.request.is_none()))?;
    slots[pos].used = true;
    Some(slots[pos].exchange.response.clone())
}

/// Serves `POST /.../chat/completions` on a loopback port until dropped.
pub struct FixtureServer {
    server: Arc<tiny_http::Server>,
    slots: Arc<Mutex<Vec<Slot>>>,
    base_url: String,
    handle: Option<JoinHandle<()>>,
}

impl FixtureServer {
    pub fn from_dir(dir: &Path) -> Result<Self, FixtureError> {
        Self::start(load_fixture(dir)?)
    }

    pub fn start(exchanges: Vec<Exchange>) -> Result<Self, FixtureError> {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").map_err(|e| FixtureError::Server(e.to_string()))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| FixtureError::Server("no IP address".into()))?;
        let slots = Arc::new(Mutex::new(
            exchanges
                .into_iter()
                .map(|exchange| Slot { exchange, used: false })
                .collect::<Vec<_>>(),
        ));
        let handle = {
            let server = Arc::clone(&server);
            let slots = Arc::clone(&slots);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    serve(request, &slots);
                }
            })
        };
        Ok(Self {
            server,
            slots,
            base_url: format!("http://{addr}/v1"),
            handle: Some(handle),
        })
    }

    /// Pass as `base_url` in an endpoint config.
    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Exchanges not yet served.
    pub fn remaining(&self) -> usize {
        self.slots.lock().expect("fixture lock").iter().filter(|s| !s.used).count()
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(mut request: tiny_http::Request, slots: &Mutex<Vec<Slot>>) {
    let mut body = String::new();
    let (status, payload) = if *request.method() != tiny_http::Method::Post || !request.url().ends_with("/chat/completions") {
        (404, error_body("only POST .../chat/completions is served"))
    } else if let Err(e) = request.as_reader().read_to_string(&mut body) {
        (400, error_body(&e.to_string()))
    } else {
        match serde_json::from_str::<serde_json::Value>(&body) {
            Err(e) => (400, error_body(&format!("request is not JSON: {e}"))),
            Ok(value) => match take_reply(slots, &value) {
                Some(reply) => (200, serde_json::to_string(&reply).expect("response serializes")),
                None => (409, error_body("no recorded exchange matches this request")),
            },
        }
    };
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_string(payload)
        .with_status_code(status)
        .with_header(header);
    if let Err(e) = request.respond(response) {
        log::warn!("fixture server could not respond: {e}");
    }
}

fn error_body(message: &str) -> String {
    serde_json::json!({"error": {"message": message, "type": "fixture"}}).to_string()
}

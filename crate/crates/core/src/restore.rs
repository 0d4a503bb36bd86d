//! Image reconstruction from received features.
//!
//! A local compositor is always available. Heavier generative restorers run
//! as a separate HTTP service:
//!
//! ```text
//! POST {endpoint}/restore
//!   {"text", "color_png_b64", "texture_png_b64", "width", "height", "seed"}
//! 200 {"image_png_b64"}
//! ```

use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SemanticPayload;
use crate::imaging::{round_to_u8, upsample, GrayImage, Resample, RgbImage};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
/// Texture modulation depth of the fallback compositor.
pub const TEXTURE_GAIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestorationRequest {
    pub text: String,
    pub color: RgbImage,
    pub texture: GrayImage,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl RestorationRequest {
    pub fn from_payload(p: &SemanticPayload, seed: u64) -> Self {
        let (width, height) = p.source_dims();
        Self {
            text: p.text.clone(),
            color: p.color.cells.clone(),
            texture: p.texture.cells.clone(),
            width,
            height,
            seed,
        }
    }
}

/// Bilinear color base modulated by the nearest-upsampled texture map:
/// `out = B · (0.5 + gain · T / 255)`.
pub fn compose_fallback(req: &RestorationRequest) -> Result<RgbImage> {
    let (w, h) = (req.width, req.height);
    if req.color.width() > w || req.color.height() > h || req.texture.width() > w || req.texture.height() > h {
        return Err(Error::param(format!(
            "feature maps {:?}/{:?} larger than target {w}x{h}",
            req.color.dims(),
            req.texture.dims()
        )));
    }
    let base = upsample(&req.color, w, h, Resample::Bilinear)?;
    let tex = upsample(&req.texture, w, h, Resample::Nearest)?;
    let mut out = base;
    for (px, &t) in out.as_raw_mut().chunks_exact_mut(3).zip(tex.as_raw()) {
        let m = 0.5 + TEXTURE_GAIN * t as f64 / 255.0;
        for c in px {
            *c = round_to_u8(*c as f64 * m);
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct WireRequest {
    text: String,
    color_png_b64: String,
    texture_png_b64: String,
    width: usize,
    height: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct WireResponse {
    image_png_b64: String,
}

/// Counting semaphore.
#[derive(Debug)]
struct Gate {
    active: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

/// HTTP client for an external restorer. Clones share the in-flight limit.
#[derive(Clone)]
pub struct RemoteRestorer {
    endpoint: String,
    agent: ureq::Agent,
    gate: Arc<Gate>,
}

impl std::fmt::Debug for RemoteRestorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteRestorer")
            .field("endpoint", &self.endpoint)
            .field("max_in_flight", &self.gate.cap)
            .finish()
    }
}

impl RemoteRestorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Result<Self> {
        let endpoint = endpoint.into().trim_end_matches('/').to_owned();
        if endpoint.is_empty() {
            return Err(Error::param("empty restorer endpoint"));
        }
        if max_in_flight == 0 {
            return Err(Error::param("max_in_flight must be positive"));
        }
        Ok(Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            endpoint,
            gate: Arc::new(Gate {
                active: Mutex::new(0),
                freed: Condvar::new(),
                cap: max_in_flight,
            }),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Restoration {
            backend: format!("remote {}", self.endpoint),
            message: message.into(),
        }
    }

    pub fn restore(&self, req: &RestorationRequest) -> Result<RgbImage> {
        let body = WireRequest {
            text: req.text.clone(),
            color_png_b64: B64.encode(req.color.to_png_bytes()?),
            texture_png_b64: B64.encode(req.texture.to_png_bytes()?),
            width: req.width,
            height: req.height,
            seed: req.seed,
        };
        let response = {
            let _permit = self.gate.acquire();
            self.agent
                .post(&format!("{}/restore", self.endpoint))
                .send_json(&body)
                .map_err(|e| match e {
                    ureq::Error::Status(code, r) => {
                        let text = r.into_string().unwrap_or_default();
                        self.fail(format!("status {code}: {}", text.trim()))
                    }
                    ureq::Error::Transport(t) => self.fail(t.to_string()),
                })?
                .into_string()
                .map_err(|e| self.fail(format!("reading response: {e}")))?
        };
        let wire: WireResponse =
            serde_json::from_str(&response).map_err(|e| self.fail(format!("malformed response: {e}")))?;
        let png = B64
            .decode(wire.image_png_b64.as_bytes())
            .map_err(|e| self.fail(format!("bad base64: {e}")))?;
        let img = RgbImage::from_png_bytes(&png).map_err(|e| self.fail(format!("bad png: {e}")))?;
        if img.dims() != (req.width, req.height) {
            return Err(self.fail(format!(
                "returned {}x{}, expected {}x{}",
                img.width(),
                img.height(),
                req.width,
                req.height
            )));
        }
        Ok(img)
    }
}

#[derive(Debug, Clone)]
pub enum RestorerBackend {
    Fallback,
    Remote(RemoteRestorer),
    /// Features only; no image is produced.
    None,
}

impl RestorerBackend {
    pub fn name(&self) -> &'static str {
        match self {
            RestorerBackend::Fallback => "fallback",
            RestorerBackend::Remote(_) => "remote",
            RestorerBackend::None => "none",
        }
    }

    /// Remote failures are reported, never replaced by the fallback.
    pub fn restore(&self, req: &RestorationRequest) -> Result<Option<RgbImage>> {
        match self {
            RestorerBackend::Fallback => compose_fallback(req).map(Some),
            RestorerBackend::Remote(r) => r.restore(req).map(Some),
            RestorerBackend::None => Ok(None),
        }
    }
}

/// Serializable selector for [`RestorerBackend`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RestorerChoice {
    #[default]
    Fallback,
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
    },
    None,
}

fn default_timeout_secs() -> u64 {
    DEFAULT_TIMEOUT.as_secs()
}

fn default_max_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl RestorerChoice {
    pub fn remote(endpoint: impl Into<String>) -> Self {
        RestorerChoice::Remote {
            endpoint: endpoint.into(),
            timeout_secs: default_timeout_secs(),
            max_in_flight: default_max_in_flight(),
        }
    }

    pub fn build(&self) -> Result<RestorerBackend> {
        Ok(match self {
            RestorerChoice::Fallback => RestorerBackend::Fallback,
            RestorerChoice::None => RestorerBackend::None,
            RestorerChoice::Remote {
                endpoint,
                timeout_secs,
                max_in_flight,
            } => RestorerBackend::Remote(RemoteRestorer::new(
                endpoint.clone(),
                Duration::from_secs(*timeout_secs),
                *max_in_flight,
            )?),
        })
    }
}

/// Behaviour of the bundled test server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StubMode {
    /// Returns the color mosaic upsampled bilinearly to the requested size.
    EchoUpsampledMosaic,
    /// Returns an image one pixel too wide.
    WrongDims,
    /// Returns a body that is not valid JSON.
    Malformed,
    /// Responds 500.
    ErrorStatus,
}

impl std::str::FromStr for StubMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::param(format!("unknown stub mode `{s}`")))
    }
}

#[derive(Debug, Default)]
struct StubStats {
    active: usize,
    peak: usize,
    served: usize,
}

/// Minimal restorer service on 127.0.0.1, for tests and local runs. Stops
/// when dropped.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    port: u16,
    stats: Arc<Mutex<StubStats>>,
    workers: Vec<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(mode: StubMode) -> Result<Self> {
        Self::start_on(0, mode, Duration::ZERO)
    }

    /// `port` 0 picks a free port. `delay` is added to every response.
    pub fn start_on(port: u16, mode: StubMode, delay: Duration) -> Result<Self> {
        let server = tiny_http::Server::http(("127.0.0.1", port)).map_err(|e| Error::Restoration {
            backend: "stub".into(),
            message: e.to_string(),
        })?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Restoration {
                backend: "stub".into(),
                message: "no ip address".into(),
            })?;
        let server = Arc::new(server);
        let stats = Arc::new(Mutex::new(StubStats::default()));
        let workers = (0..8)
            .map(|_| {
                let (server, stats) = (server.clone(), stats.clone());
                std::thread::spawn(move || {
                    for request in server.incoming_requests() {
                        {
                            let mut s = stats.lock().unwrap_or_else(|e| e.into_inner());
                            s.active += 1;
                            s.served += 1;
                            s.peak = s.peak.max(s.active);
                        }
                        std::thread::sleep(delay);
                        stub_respond(request, mode);
                        let mut s = stats.lock().unwrap_or_else(|e| e.into_inner());
                        s.active -= 1;
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            port,
            stats,
            workers,
        })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    /// Highest number of requests handled at once so far.
    pub fn peak_concurrency(&self) -> usize {
        self.stats.lock().unwrap_or_else(|e| e.into_inner()).peak
    }

    /// Requests received so far.
    pub fn served(&self) -> usize {
        self.stats.lock().unwrap_or_else(|e| e.into_inner()).served
    }

    /// Blocks until the server is stopped from another thread.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn stub_respond(mut request: tiny_http::Request, mode: StubMode) {
    let json_header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let reply = |request: tiny_http::Request, status: u16, body: String| {
        let _ = request.respond(
            tiny_http::Response::from_string(body)
                .with_status_code(status)
                .with_header(json_header.clone()),
        );
    };
    if request.method() != &tiny_http::Method::Post || request.url() != "/restore" {
        return reply(request, 404, r#"{"error":"not found"}"#.into());
    }
    match mode {
        StubMode::ErrorStatus => return reply(request, 500, r#"{"error":"stub failure"}"#.into()),
        StubMode::Malformed => return reply(request, 200, "{not json".into()),
        _ => {}
    }
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        return reply(request, 400, r#"{"error":"unreadable body"}"#.into());
    }
    let result = (|| -> Result<String> {
        let wire: WireRequest = serde_json::from_str(&body)?;
        let png = B64
            .decode(wire.color_png_b64.as_bytes())
            .map_err(|e| Error::Format(e.to_string()))?;
        let color = RgbImage::from_png_bytes(&png)?;
        let img = upsample(&color, wire.width, wire.height, Resample::Bilinear)?;
        let img = match mode {
            StubMode::WrongDims => RgbImage::from_fn(wire.width + 1, wire.height, |x, y| {
                img.pixel(x.min(wire.width - 1), y)
            })?,
            _ => img,
        };
        Ok(serde_json::to_string(&WireResponse {
            image_png_b64: B64.encode(img.to_png_bytes()?),
        })?)
    })();
    match result {
        Ok(body) => reply(request, 200, body),
        Err(e) => reply(request, 400, serde_json::json!({ "error": e.to_string() }).to_string()),
    }
}

//! HTTP client for the bridge service.
//!
//! `POST {endpoint}/v1/segment_sequence` with
//! `{"model", "frames": [b64 png], "prompt": {"frame_index", "mask"}, "multimask": false}`,
//! answered by `{"masks": [b64 png, one per frame]}` or `{"error": string}` on 4xx/5xx.

use std::fmt;
use std::io::Read;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::image::BinaryMask;
use crate::volume_io::{decode_mask_png_counting, encode_gray_png, encode_mask_png};

use super::{BackendError, PromptedSequence, SegmenterBackend};

pub const SEGMENT_PATH: &str = "/v1/segment_sequence";
pub const HEALTH_PATH: &str = "/v1/health";
const MAX_RESPONSE_BYTES: u64 = 512 << 20;
const RETRY_BACKOFF: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    #[default]
    Tiny,
    Small,
    Base,
    Large,
}

impl ModelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Tiny => "tiny",
            ModelVariant::Small => "small",
            ModelVariant::Base => "base",
            ModelVariant::Large => "large",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(ModelVariant::Tiny),
            "small" => Ok(ModelVariant::Small),
            "base" => Ok(ModelVariant::Base),
            "large" => Ok(ModelVariant::Large),
            other => Err(format!("unknown model variant `{other}` (expected tiny, small, base or large)")),
        }
    }
}

#[derive(Debug, Serialize)]
struct WirePrompt {
    frame_index: usize,
    mask: String,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    frames: Vec<String>,
    prompt: WirePrompt,
    multimask: bool,
}

/// Serializes the request body for `seq`.
pub fn encode_segment_request(seq: &PromptedSequence, variant: ModelVariant) -> Result<String, BackendError> {
    let encode_err = |e: crate::volume_io::VolumeIoError| BackendError::InvalidSequence(e.to_string());
    let frames = seq
        .frames()
        .iter()
        .map(|f| encode_gray_png(f).map(|b| STANDARD.encode(b)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(encode_err)?;
    let mask = STANDARD.encode(encode_mask_png(seq.prompt_mask()).map_err(encode_err)?);
    let body = WireRequest {
        model: variant.as_str(),
        frames,
        prompt: WirePrompt {
            frame_index: seq.prompt_frame(),
            mask,
        },
        multimask: false,
    };
    Ok(serde_json::to_string(&body).expect("request serializes"))
}

/// Decoded 200 response.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResponse {
    pub masks: Vec<BinaryMask>,
    /// Samples that were neither 0 nor 255 and were mapped by the nonzero rule.
    pub nonbinary_samples: usize,
}

/// Parses and validates a 200 response body against the expected frame geometry.
pub fn parse_segment_response(body: &[u8], dims: (u32, u32), frames: usize) -> Result<SegmentResponse, BackendError> {
    let violation = BackendError::ProtocolViolation;
    let value: Value =
        serde_json::from_slice(body).map_err(|e| violation(format!("response is not valid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| violation("response is not a JSON object".into()))?;
    let masks = obj
        .get("masks")
        .ok_or_else(|| violation("missing field `masks`".into()))?
        .as_array()
        .ok_or_else(|| violation("field `masks` is not an array".into()))?;
    if masks.len() != frames {
        return Err(violation(format!(
            "field `masks` has {} entries for {frames} frames",
            masks.len()
        )));
    }
    let mut out = Vec::with_capacity(frames);
    let mut nonbinary_samples = 0;
    for (i, m) in masks.iter().enumerate() {
        let text = m
            .as_str()
            .ok_or_else(|| violation(format!("field `masks[{i}]` is not a string")))?;
        let bytes = STANDARD
            .decode(text)
            .map_err(|e| violation(format!("field `masks[{i}]` is not valid base64: {e}")))?;
        let (mask, odd) =
            decode_mask_png_counting(&bytes).map_err(|e| violation(format!("field `masks[{i}]`: {e}")))?;
        if mask.dims() != dims {
            return Err(violation(format!(
                "field `masks[{i}]` is {}x{}, frames are {}x{}",
                mask.width(),
                mask.height(),
                dims.0,
                dims.1
            )));
        }
        nonbinary_samples += odd;
        out.push(mask);
    }
    Ok(SegmentResponse {
        masks: out,
        nonbinary_samples,
    })
}

/// Turns a 4xx/5xx body into a service-reported error; a body without an
/// `error` string is itself a protocol violation.
pub fn parse_error_response(status: u16, body: &[u8]) -> BackendError {
    let message = serde_json::from_slice::<Value>(body)
        .ok()
        .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_owned));
    match message {
        Some(message) => BackendError::RemoteModelError { status, message },
        None => BackendError::ProtocolViolation(format!("HTTP {status} response without an `error` field")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub model: String,
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteBackend {
    endpoint: String,
    variant: ModelVariant,
    retries: u32,
    agent: ureq::Agent,
    in_flight: Semaphore,
    max_in_flight: usize,
    nonbinary_responses: AtomicU64,
    nonbinary_samples: AtomicU64,
    prompt_overrides: AtomicU64,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("variant", &self.variant)
            .field("retries", &self.retries)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

pub fn remote_backend(endpoint: &str, variant: ModelVariant, timeout: Duration, retries: u32) -> RemoteBackend {
    RemoteBackend {
        endpoint: endpoint.trim_end_matches('/').to_owned(),
        variant,
        retries,
        agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        in_flight: Semaphore::new(DEFAULT_MAX_IN_FLIGHT),
        max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        nonbinary_responses: AtomicU64::new(0),
        nonbinary_samples: AtomicU64::new(0),
        prompt_overrides: AtomicU64::new(0),
    }
}

enum Outcome {
    Body(u16, Vec<u8>),
    Transport(String),
}

impl RemoteBackend {
    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self.in_flight = Semaphore::new(self.max_in_flight);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    /// Responses that contained mask samples outside {0, 255}.
    pub fn warning_count(&self) -> u64 {
        self.nonbinary_responses.load(Ordering::Relaxed)
    }

    pub fn nonbinary_sample_count(&self) -> u64 {
        self.nonbinary_samples.load(Ordering::Relaxed)
    }

    /// Responses whose prompted-frame mask differed from the prompt and was replaced.
    pub fn prompt_override_count(&self) -> u64 {
        self.prompt_overrides.load(Ordering::Relaxed)
    }

    fn read_body(resp: ureq::Response) -> Result<Vec<u8>, String> {
        let mut buf = Vec::new();
        resp.into_reader()
            .take(MAX_RESPONSE_BYTES)
            .read_to_end(&mut buf)
            .map_err(|e| e.to_string())?;
        Ok(buf)
    }

    fn attempt(&self, request: ureq::Request, body: Option<&str>) -> Outcome {
        let result = match body {
            Some(b) => request.set("Content-Type", "application/json").send_string(b),
            None => request.call(),
        };
        match result {
            Ok(resp) | Err(ureq::Error::Status(_, resp)) => {
                let status = resp.status();
                match Self::read_body(resp) {
                    Ok(bytes) => Outcome::Body(status, bytes),
                    Err(e) => Outcome::Transport(e),
                }
            }
            Err(ureq::Error::Transport(t)) => Outcome::Transport(t.to_string()),
        }
    }

    /// Sends with retries on transport failure only; returns status and body.
    fn send(&self, method: &str, path: &str, body: Option<&str>) -> Result<(u16, Vec<u8>), BackendError> {
        let url = format!("{}{}", self.endpoint, path);
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                log::warn!("retrying {url} after transport failure ({attempt}/{}): {last}", self.retries);
                std::thread::sleep(RETRY_BACKOFF * attempt);
            }
            match self.attempt(self.agent.request(method, &url), body) {
                Outcome::Body(status, bytes) => return Ok((status, bytes)),
                Outcome::Transport(e) => last = e,
            }
        }
        Err(BackendError::Unreachable(format!("{url}: {last}")))
    }

    pub fn health(&self) -> Result<HealthStatus, BackendError> {
        let (status, body) = self.send("GET", HEALTH_PATH, None)?;
        if status != 200 {
            return Err(parse_error_response(status, &body));
        }
        let health: HealthStatus = serde_json::from_slice(&body)
            .map_err(|e| BackendError::ProtocolViolation(format!("health response: {e}")))?;
        if health.status != "ok" {
            return Err(BackendError::RemoteModelError {
                status,
                message: format!("service status `{}`", health.status),
            });
        }
        Ok(health)
    }
}

impl SegmenterBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.variant)
    }

    fn segment(&self, seq: &PromptedSequence) -> Result<Vec<BinaryMask>, BackendError> {
        let body = encode_segment_request(seq, self.variant)?;
        let (status, bytes) = {
            let _permit = self.in_flight.acquire();
            self.send("POST", SEGMENT_PATH, Some(&body))?
        };
        if status != 200 {
            return Err(parse_error_response(status, &bytes));
        }
        let resp = parse_segment_response(&bytes, seq.dims(), seq.frames().len())?;
        if resp.nonbinary_samples > 0 {
            self.nonbinary_responses.fetch_add(1, Ordering::Relaxed);
            self.nonbinary_samples
                .fetch_add(resp.nonbinary_samples as u64, Ordering::Relaxed);
            log::warn!(
                "segmenter returned {} mask samples outside {{0,255}}; mapped nonzero to foreground",
                resp.nonbinary_samples
            );
        }
        let mut masks = resp.masks;
        let k = seq.prompt_frame();
        if &masks[k] != seq.prompt_mask() {
            self.prompt_overrides.fetch_add(1, Ordering::Relaxed);
            log::warn!("segmenter altered the prompted frame {k}; restoring the prompt mask");
            masks[k] = seq.prompt_mask().clone();
        }
        Ok(masks)
    }
}

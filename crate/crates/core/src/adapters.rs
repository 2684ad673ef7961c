//! Out-of-process predict functions: a child process speaking CSV on stdin
//! and one prediction per line on stdout, and a JSON-over-HTTP client.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value as Json};
use wait_timeout::ChildExt;

use crate::data::{ColumnData, TabularDataset};
use crate::error::{Error, Result};
use crate::model::Predictor;

/// Environment variable overriding the default adapter timeout, in milliseconds.
pub const TIMEOUT_ENV: &str = "BOXPLAIN_ADAPTER_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_BATCH: usize = 1024;
const DIAGNOSTIC_LIMIT: usize = 4096;

/// Default timeout, honouring [`TIMEOUT_ENV`] when it holds a positive integer.
pub fn default_timeout() -> Duration {
    let ms = std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<u64>().ok())
        .filter(|&ms| ms > 0)
        .unwrap_or(DEFAULT_TIMEOUT_MS);
    Duration::from_millis(ms)
}

fn truncate(text: &str) -> &str {
    if text.len() <= DIAGNOSTIC_LIMIT {
        return text;
    }
    let mut end = DIAGNOSTIC_LIMIT;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

/// A model served by a child process, spawned once per predict call.
#[derive(Debug, Clone)]
pub struct SubprocessModel {
    program: String,
    args: Vec<String>,
    timeout: Duration,
}

impl SubprocessModel {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Result<Self> {
        let program = program.into();
        if program.is_empty() {
            return Err(Error::usage("subprocess model command must not be empty"));
        }
        Ok(SubprocessModel {
            program,
            args,
            timeout: default_timeout(),
        })
    }

    /// Runs `command` through `sh -c`.
    pub fn shell(command: &str) -> Result<Self> {
        if command.trim().is_empty() {
            return Err(Error::usage("subprocess model command must not be empty"));
        }
        Self::new("sh", vec!["-c".into(), command.into()])
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn describe(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn failure(&self, what: impl std::fmt::Display, stderr: &str) -> Error {
        let stderr = truncate(stderr).trim_end();
        if stderr.is_empty() {
            Error::adapter(format!("subprocess '{}': {what}", self.describe()))
        } else {
            Error::adapter(format!(
                "subprocess '{}': {what}; stderr: {stderr}",
                self.describe()
            ))
        }
    }
}

impl Predictor for SubprocessModel {
    fn predict(&self, query: &TabularDataset) -> Result<Vec<f64>> {
        subprocess_predict(self, query)
    }

    fn is_reentrant(&self) -> bool {
        false
    }
}

/// Writes `query` as CSV to a fresh child process and reads one decimal
/// prediction per output line.
pub fn subprocess_predict(spec: &SubprocessModel, query: &TabularDataset) -> Result<Vec<f64>> {
    let input = query.to_csv_string()?;
    let mut child = Command::new(&spec.program)
        .args(&spec.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| spec.failure(format!("cannot spawn: {e}"), ""))?;

    let mut stdin = child.stdin.take().expect("stdin piped");
    let mut stdout = child.stdout.take().expect("stdout piped");
    let mut stderr = child.stderr.take().expect("stderr piped");
    // A child may exit without draining its input; the resulting broken pipe
    // is reported through the exit status instead.
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(input.as_bytes());
    });
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });
    let (err_tx, err_rx) = std::sync::mpsc::channel();
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        let _ = err_tx.send(String::from_utf8_lossy(&buf).into_owned());
    });

    let status = match child.wait_timeout(spec.timeout)? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            // Grandchildren may still hold the pipes open; do not wait on them.
            let err = err_rx
                .recv_timeout(Duration::from_millis(100))
                .unwrap_or_default();
            return Err(spec.failure(
                format!("timed out after {} ms", spec.timeout.as_millis()),
                &err,
            ));
        }
    };
    let _ = writer.join();
    let out = out_reader
        .join()
        .map_err(|_| Error::adapter("stdout reader panicked"))?
        .map_err(|e| spec.failure(format!("cannot read stdout: {e}"), ""))?;
    let err = err_rx.recv().unwrap_or_default();

    if !status.success() {
        let what = match status.code() {
            Some(code) => format!("exited with status {code}"),
            None => "terminated by a signal".to_string(),
        };
        return Err(spec.failure(what, &err));
    }
    let text = String::from_utf8(out)
        .map_err(|_| spec.failure("stdout is not valid UTF-8", &err))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != query.n_rows() {
        return Err(spec.failure(
            format!(
                "expected {} predictions, got {}",
                query.n_rows(),
                lines.len()
            ),
            &err,
        ));
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            line.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    spec.failure(
                        format!("line {} is not a number: '{}'", i + 1, truncate(line)),
                        &err,
                    )
                })
        })
        .collect()
}

/// A model behind an HTTP endpoint accepting JSON batches.
#[derive(Debug, Clone)]
pub struct HttpModel {
    url: String,
    timeout: Duration,
    max_batch: usize,
    headers: Vec<(String, String)>,
}

impl HttpModel {
    pub fn new(url: impl Into<String>) -> Result<Self> {
        let url = url.into();
        let uri: ureq::http::Uri = url
            .parse()
            .map_err(|e| Error::usage(format!("invalid model URL '{url}': {e}")))?;
        if !matches!(uri.scheme_str(), Some("http" | "https")) || uri.host().is_none() {
            return Err(Error::usage(format!(
                "model URL '{url}' must be an absolute http(s) URL"
            )));
        }
        Ok(HttpModel {
            url,
            timeout: default_timeout(),
            max_batch: DEFAULT_MAX_BATCH,
            headers: Vec::new(),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Result<Self> {
        if max_batch == 0 {
            return Err(Error::usage("HTTP batch size must be at least 1"));
        }
        self.max_batch = max_batch;
        Ok(self)
    }

    /// Adds a header sent with every request.
    pub fn with_header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }

    fn post(&self, agent: &ureq::Agent, body: String, rows: usize) -> Result<Vec<f64>> {
        let fail = |what: String| Error::adapter(format!("HTTP model '{}': {what}", self.url));
        let mut req = agent.post(&self.url).header("Content-Type", "application/json");
        for (k, v) in &self.headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => {
                fail(format!("timed out after {} ms", self.timeout.as_millis()))
            }
            other => fail(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| fail(format!("status {status}, cannot read body: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(fail(format!("status {status}: {}", truncate(&text))));
        }
        let parsed: Json = serde_json::from_str(&text)
            .map_err(|e| fail(format!("status {status}, malformed JSON ({e}): {}", truncate(&text))))?;
        let preds = parsed
            .get("predictions")
            .and_then(Json::as_array)
            .ok_or_else(|| {
                fail(format!(
                    "status {status}, response lacks a \"predictions\" array: {}",
                    truncate(&text)
                ))
            })?;
        if preds.len() != rows {
            return Err(fail(format!(
                "status {status}, expected {rows} predictions, got {}",
                preds.len()
            )));
        }
        preds
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_f64().ok_or_else(|| {
                    fail(format!("status {status}, prediction {} is not a number: {v}", i + 1))
                })
            })
            .collect()
    }
}

impl Predictor for HttpModel {
    fn predict(&self, query: &TabularDataset) -> Result<Vec<f64>> {
        http_predict(self, query)
    }
}

/// JSON request body for rows `start..end` of `query`.
pub fn request_body(query: &TabularDataset, start: usize, end: usize) -> String {
    let columns: Vec<&str> = query.column_names();
    let kinds: Vec<String> = query.columns().iter().map(|c| c.kind().to_string()).collect();
    let rows: Vec<Json> = (start..end)
        .map(|i| {
            Json::Array(
                query
                    .columns()
                    .iter()
                    .map(|c| match c.data() {
                        ColumnData::Numeric(v) => json!(v[i]),
                        ColumnData::Categorical(v) => Json::String(v[i].clone()),
                    })
                    .collect(),
            )
        })
        .collect();
    json!({ "columns": columns, "kinds": kinds, "rows": rows }).to_string()
}

/// Posts `query` in batches of at most `max_batch` rows and concatenates the
/// returned predictions in order.
pub fn http_predict(spec: &HttpModel, query: &TabularDataset) -> Result<Vec<f64>> {
    let agent = spec.agent();
    let n = query.n_rows();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + spec.max_batch).min(n);
        out.extend(spec.post(&agent, request_body(query, start, end), end - start)?);
        start = end;
    }
    Ok(out)
}

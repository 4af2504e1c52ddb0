//! Objectives evaluated by a long-lived child process.
//!
//! Protocol (v1): one JSON object per line, UTF-8, one request in flight.
//! The harness writes `{"x":[...]}` and the child answers `{"y":<number>}`
//! or `{"error":"<message>"}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT_MS: u64 = 600_000;

#[derive(Serialize)]
struct Request<'a> {
    x: &'a [f64],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Response {
    Value { y: f64 },
    Failure { error: String },
}

/// A running child process that evaluates points.
#[derive(Debug)]
pub struct ExternalObjective {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl ExternalObjective {
    /// Starts `command` through `sh -c`. Its stderr is inherited.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            command: command.to_string(),
            child,
            stdin,
            lines: rx,
            timeout,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sends one request and waits for its response.
    pub fn evaluate(&mut self, x: &[f64]) -> Result<f64> {
        let mut request = serde_json::to_string(&Request { x })?;
        request.push('\n');
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::objective("child input is closed", None))?;
        if let Err(e) = stdin.write_all(request.as_bytes()).and_then(|_| stdin.flush()) {
            return Err(self.exited(format!("could not write request: {e}")));
        }
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::objective(format!("could not read response: {e}"), None)),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::objective(
                    format!("no response within {} ms", self.timeout.as_millis()),
                    None,
                ))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.exited("child closed its output".into()))
            }
        };
        match serde_json::from_str::<Response>(line.trim()) {
            Ok(Response::Value { y }) if y.is_finite() => Ok(y),
            Ok(Response::Value { y }) => Err(Error::objective(
                format!("non-finite objective value {y}"),
                Some(line),
            )),
            Ok(Response::Failure { error }) => Err(Error::objective(error, Some(line))),
            Err(_) => Err(Error::objective("malformed response", Some(line))),
        }
    }

    fn exited(&mut self, what: String) -> Error {
        let status = match self.child.wait_timeout_hint() {
            Some(code) => format!("; exit status {code}"),
            None => String::new(),
        };
        Error::objective(format!("{what}{status}"), None)
    }
}

trait WaitHint {
    fn wait_timeout_hint(&mut self) -> Option<String>;
}

impl WaitHint for Child {
    /// Exit status if the child has already terminated or does so shortly.
    fn wait_timeout_hint(&mut self) -> Option<String> {
        for _ in 0..50 {
            if let Ok(Some(status)) = self.try_wait() {
                return Some(status.to_string());
            }
            thread::sleep(Duration::from_millis(10));
        }
        None
    }
}

impl Drop for ExternalObjective {
    fn drop(&mut self) {
        // closing stdin lets a well-behaved child exit on its own
        drop(self.stdin.take());
        if self.child.wait_timeout_hint().is_none() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

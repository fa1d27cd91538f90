//! PWP/1: line-delimited JSON between the harness and a predictor process.
//!
//! The client drives one request at a time. [`serve`] is the responder side,
//! used by `salient serve` and by the in-process loopback.

use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::metrics::NUM_CLASSES;
use crate::predictor::{validate_probs, Predictor, PredictorError};

pub const PROTOCOL: &str = "pwp/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello { protocol: String, classes: usize },
    Ready { name: String, input_frames: usize },
    Predict { id: String, path: String },
    Result { id: String, probs: Vec<f64> },
    Bye,
    Error { id: Option<String>, message: String },
}

impl Message {
    pub fn hello() -> Self {
        Message::Hello {
            protocol: PROTOCOL.to_string(),
            classes: NUM_CLASSES,
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages serialize");
        s.push('\n');
        s
    }
}

type BoxReader = Box<dyn BufRead + Send>;
type BoxWriter = Box<dyn Write + Send>;
type ServerThread = JoinHandle<Result<(), PredictorError>>;

enum Endpoint {
    Child(Child),
    Thread(Option<ServerThread>),
    Detached,
}

/// Harness side of a PWP/1 session. Construction performs the handshake.
pub struct PwpClient {
    reader: BoxReader,
    writer: Option<BoxWriter>,
    endpoint: Endpoint,
    name: String,
    input_frames: usize,
    outstanding: bool,
    desynced: bool,
    closed: bool,
}

fn protocol(msg: impl Into<String>) -> PredictorError {
    PredictorError::Protocol(msg.into())
}

impl PwpClient {
    /// Spawns `program` with piped stdin/stdout; stderr is inherited.
    pub fn spawn<I, A>(program: impl AsRef<std::ffi::OsStr>, args: I) -> Result<Self, PredictorError>
    where
        I: IntoIterator<Item = A>,
        A: AsRef<std::ffi::OsStr>,
    {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(Box::new(BufReader::new(stdout)), Box::new(stdin), Endpoint::Child(child))
    }

    /// Runs [`serve`] over `predictor` on a background thread connected by
    /// in-process pipes.
    pub fn loopback<P: Predictor + Send + 'static>(mut predictor: P) -> Result<Self, PredictorError> {
        Self::loopback_with(move |r, w| serve(r, w, &mut predictor).map_err(PredictorError::from))
    }

    /// Connects to an arbitrary responder running on a background thread.
    pub fn loopback_with<F>(server: F) -> Result<Self, PredictorError>
    where
        F: FnOnce(BoxReader, BoxWriter) -> Result<(), PredictorError> + Send + 'static,
    {
        let (req_r, req_w) = io::pipe()?;
        let (resp_r, resp_w) = io::pipe()?;
        let handle = std::thread::spawn(move || server(Box::new(BufReader::new(req_r)), Box::new(resp_w)));
        Self::handshake(
            Box::new(BufReader::new(resp_r)),
            Box::new(req_w),
            Endpoint::Thread(Some(handle)),
        )
    }

    /// Uses already-connected streams; `shutdown` only sends `bye`.
    pub fn from_streams(reader: BoxReader, writer: BoxWriter) -> Result<Self, PredictorError> {
        Self::handshake(reader, writer, Endpoint::Detached)
    }

    fn handshake(reader: BoxReader, writer: BoxWriter, endpoint: Endpoint) -> Result<Self, PredictorError> {
        let mut client = PwpClient {
            reader,
            writer: Some(writer),
            endpoint,
            name: String::new(),
            input_frames: 0,
            outstanding: false,
            desynced: false,
            closed: false,
        };
        client.send(&Message::hello())?;
        match client.recv_message()? {
            Message::Ready { name, input_frames } => {
                client.name = name;
                client.input_frames = input_frames;
                Ok(client)
            }
            other => Err(protocol(format!("expected ready, got {other:?}"))),
        }
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), PredictorError> {
        self.send_raw(&msg.to_line())
    }

    /// Writes `line` verbatim; a trailing LF is appended when missing.
    pub fn send_raw(&mut self, line: &str) -> Result<(), PredictorError> {
        let w = self.writer.as_mut().ok_or_else(|| protocol("session closed"))?;
        w.write_all(line.as_bytes())?;
        if !line.ends_with('\n') {
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads and parses the next line. End of stream and unparsable lines
    /// are protocol errors.
    pub fn recv_message(&mut self) -> Result<Message, PredictorError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            self.desynced = true;
            return Err(PredictorError::Exit("end of stream".into()));
        }
        serde_json::from_str(line.trim_end_matches(['\n', '\r'])).map_err(|e| {
            self.desynced = true;
            protocol(format!("unparsable line {:?}: {e}", line.trim_end()))
        })
    }

    /// One request, one response. Remote errors leave the session usable;
    /// anything that desynchronizes the stream poisons it.
    pub fn request(&mut self, id: &str, path: &Path) -> Result<[f64; NUM_CLASSES], PredictorError> {
        if self.desynced {
            return Err(protocol("session is desynchronized"));
        }
        if self.outstanding {
            return Err(protocol("a request is already outstanding"));
        }
        let path = path
            .to_str()
            .ok_or_else(|| PredictorError::Input(format!("non UTF-8 path {}", path.display())))?;
        self.outstanding = true;
        self.send(&Message::Predict {
            id: id.to_string(),
            path: path.to_string(),
        })?;
        let reply = self.recv_message();
        self.outstanding = false;
        match reply? {
            Message::Result { id: got, probs } if got == id => {
                validate_probs(&probs)?;
                let mut out = [0.0; NUM_CLASSES];
                out.copy_from_slice(&probs);
                Ok(out)
            }
            Message::Result { id: got, .. } => {
                self.desynced = true;
                Err(protocol(format!("response id {got:?} does not match request {id:?}")))
            }
            Message::Error { id: got, message } if got.as_deref() == Some(id) => Err(PredictorError::Remote(message)),
            other => {
                self.desynced = true;
                Err(protocol(format!("unexpected reply {other:?}")))
            }
        }
    }

    /// Sends `bye` and waits for the peer to finish; a child must exit 0.
    pub fn shutdown(mut self) -> Result<(), PredictorError> {
        self.close()
    }

    fn close(&mut self) -> Result<(), PredictorError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        let sent = self.send(&Message::Bye);
        self.writer = None;
        match &mut self.endpoint {
            Endpoint::Child(child) => {
                let status = child.wait()?;
                sent?;
                if status.success() {
                    Ok(())
                } else {
                    Err(PredictorError::Exit(status.to_string()))
                }
            }
            Endpoint::Thread(handle) => {
                let result = handle
                    .take()
                    .map(|h| h.join().unwrap_or_else(|_| Err(PredictorError::Exit("server thread panicked".into()))))
                    .unwrap_or(Ok(()));
                sent?;
                result
            }
            Endpoint::Detached => sent,
        }
    }
}

impl Predictor for PwpClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_frames(&self) -> usize {
        self.input_frames
    }

    fn predict(&mut self, id: &str, path: &Path) -> Result<[f64; NUM_CLASSES], PredictorError> {
        self.request(id, path)
    }
}

impl Drop for PwpClient {
    fn drop(&mut self) {
        if self.closed {
            return;
        }
        if let Endpoint::Child(child) = &mut self.endpoint {
            let _ = self.writer.take().map(|mut w| w.write_all(Message::Bye.to_line().as_bytes()));
            let _ = child.kill();
            let _ = child.wait();
            self.closed = true;
        } else {
            let _ = self.close();
        }
    }
}

/// Responder loop. Protocol violations get an `error` reply and the loop
/// continues; returns on `bye` or end of input.
pub fn serve<R: BufRead, W: Write>(mut reader: R, mut writer: W, predictor: &mut dyn Predictor) -> io::Result<()> {
    let mut greeted = false;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let text = line.trim_end_matches(['\n', '\r']);
        let reply = match serde_json::from_str::<Message>(text) {
            Err(e) => Message::Error {
                id: None,
                message: format!("malformed message: {e}"),
            },
            Ok(Message::Bye) => return Ok(()),
            Ok(Message::Hello { protocol, classes }) => {
                if protocol != PROTOCOL || classes != NUM_CLASSES {
                    Message::Error {
                        id: None,
                        message: format!("unsupported protocol {protocol} with {classes} classes"),
                    }
                } else {
                    greeted = true;
                    Message::Ready {
                        name: predictor.name().to_string(),
                        input_frames: predictor.input_frames(),
                    }
                }
            }
            Ok(Message::Predict { id, .. }) if !greeted => Message::Error {
                id: Some(id),
                message: "hello required before predict".into(),
            },
            Ok(Message::Predict { id, path }) => {
                match predictor
                    .predict(&id, Path::new(&path))
                    .and_then(|p| validate_probs(&p).map(|_| p))
                {
                    Ok(probs) => Message::Result {
                        id,
                        probs: probs.to_vec(),
                    },
                    Err(e) => Message::Error {
                        id: Some(id),
                        message: e.to_string(),
                    },
                }
            }
            Ok(other) => Message::Error {
                id: None,
                message: format!("unexpected message type {other:?}"),
            },
        };
        writer.write_all(reply.to_line().as_bytes())?;
        writer.flush()?;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        if self.detail.is_empty() {
            write!(f, "{tag} {}", self.name)
        } else {
            write!(f, "{tag} {}: {}", self.name, self.detail)
        }
    }
}

type Connect<'a> = dyn FnMut() -> Result<PwpClient, PredictorError> + 'a;

fn check(name: &'static str, connect: &mut Connect<'_>, body: impl FnOnce(&mut PwpClient) -> Result<(), String>) -> CheckResult {
    let outcome = connect().map_err(|e| format!("connect: {e}")).and_then(|mut client| {
        body(&mut client)?;
        client.shutdown().map_err(|e| format!("shutdown: {e}"))
    });
    CheckResult {
        name,
        passed: outcome.is_ok(),
        detail: outcome.err().unwrap_or_default(),
    }
}

fn expect_error_then_recover(client: &mut PwpClient, sample: &Path, want_id: Option<&str>) -> Result<(), String> {
    match client.recv_message().map_err(|e| e.to_string())? {
        Message::Error { id, .. } if want_id.is_none() || id.as_deref() == want_id => {}
        other => return Err(format!("expected error reply, got {other:?}")),
    }
    client.request("after-error", sample).map(|_| ()).map_err(|e| format!("no recovery: {e}"))
}

/// Runs the PWP/1 conformance checks. Each check opens a fresh session via
/// `connect`; `sample` must be a readable salient PPM.
pub fn run_conformance(connect: &mut Connect<'_>, sample: &Path) -> Vec<CheckResult> {
    let missing = sample.with_file_name("pwp-conformance-missing.ppm");
    vec![
        check("handshake", connect, |c| {
            if c.name().is_empty() || c.input_frames() == 0 {
                Err(format!("ready carried name {:?} input_frames {}", c.name(), c.input_frames()))
            } else {
                Ok(())
            }
        }),
        check("predict returns valid probabilities", connect, |c| {
            c.request("p-1", sample).map(|_| ()).map_err(|e| e.to_string())
        }),
        check("ids are echoed across sequential requests", connect, |c| {
            (0..5).try_for_each(|i| c.request(&format!("seq-{i}"), sample).map(|_| ()).map_err(|e| e.to_string()))
        }),
        check("repeated input gives identical output", connect, |c| {
            let a = c.request("d-1", sample).map_err(|e| e.to_string())?;
            let b = c.request("d-2", sample).map_err(|e| e.to_string())?;
            if a == b {
                Ok(())
            } else {
                Err(format!("{a:?} != {b:?}"))
            }
        }),
        check("unreadable path is answered with error", connect, |c| {
            match c.request("bad-path", &missing) {
                Err(PredictorError::Remote(_)) => {}
                other => return Err(format!("expected remote error, got {other:?}")),
            }
            c.request("after-error", sample).map(|_| ()).map_err(|e| format!("no recovery: {e}"))
        }),
        check("malformed line is answered with error", connect, |c| {
            c.send_raw("this is not json").map_err(|e| e.to_string())?;
            expect_error_then_recover(c, sample, None)
        }),
        check("unknown message type is answered with error", connect, |c| {
            c.send_raw(r#"{"type":"frobnicate","id":"u-1"}"#).map_err(|e| e.to_string())?;
            expect_error_then_recover(c, sample, None)
        }),
        check("bye ends the session cleanly", connect, |_| Ok(())),
    ]
}

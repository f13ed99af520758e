use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError};
use serde::{Deserialize, Serialize};

use super::manifest::FunctionManifest;
use super::protocol::{Frame, ResultFrame, RunFrame, PROTOCOL_VERSION};

/// Default per-batch timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);
const STDERR_LIMIT: usize = 16 * 1024;

/// How to launch a plugin: an argv and an optional working directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginCommand {
    pub argv: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cwd: Option<PathBuf>,
}

impl PluginCommand {
    pub fn new<S: Into<String>>(argv: impl IntoIterator<Item = S>) -> Self {
        PluginCommand { argv: argv.into_iter().map(Into::into).collect(), cwd: None }
    }

    pub fn display(&self) -> String {
        self.argv.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PluginError {
    #[error("cannot start plugin `{command}`: {message}")]
    Spawn { command: String, message: String },
    #[error("plugin timed out after {secs:.1}s{}", fmt_stderr(.stderr))]
    Timeout { secs: f64, stderr: String },
    #[error("plugin exited unexpectedly{}", fmt_stderr(.stderr))]
    Exited { stderr: String },
    #[error("protocol violation: {message}{}", fmt_stderr(.stderr))]
    Protocol { message: String, stderr: String },
    #[error("plugin reported an error: {0}")]
    Reported(String),
}

fn fmt_stderr(stderr: &str) -> String {
    if stderr.trim().is_empty() {
        String::new()
    } else {
        format!("; stderr: {}", stderr.trim())
    }
}

/// Direction of a recorded protocol line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// A running plugin subprocess, owned by exactly one thread.
pub struct PluginProcess {
    command: PluginCommand,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    stderr: Arc<Mutex<String>>,
    functions: Vec<FunctionManifest>,
    timeout: Duration,
    transcript: Option<Vec<(Direction, String)>>,
}

impl PluginProcess {
    /// Starts the plugin and completes the hello/manifest handshake.
    pub fn spawn(command: &PluginCommand, timeout: Duration) -> Result<Self, PluginError> {
        Self::spawn_inner(command, timeout, false)
    }

    /// Like [`PluginProcess::spawn`] but records every protocol line.
    pub fn spawn_recording(command: &PluginCommand, timeout: Duration) -> Result<Self, PluginError> {
        Self::spawn_inner(command, timeout, true)
    }

    fn spawn_inner(command: &PluginCommand, timeout: Duration, record: bool) -> Result<Self, PluginError> {
        let spawn_err = |message: String| PluginError::Spawn { command: command.display(), message };
        let (program, args) = command.argv.split_first().ok_or_else(|| spawn_err("empty command".into()))?;
        let mut cmd = Command::new(program);
        cmd.args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
        if let Some(dir) = &command.cwd {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|e| spawn_err(e.to_string()))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr_pipe = child.stderr.take().expect("piped stderr");

        let (tx, lines) = crossbeam_channel::unbounded();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut reader = BufReader::new(stderr_pipe);
            let mut buf = [0u8; 4096];
            while let Ok(n) = reader.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut s = sink.lock().unwrap();
                s.push_str(&String::from_utf8_lossy(&buf[..n]));
                if s.len() > STDERR_LIMIT {
                    let mut cut = s.len() - STDERR_LIMIT;
                    while !s.is_char_boundary(cut) {
                        cut += 1;
                    }
                    s.drain(..cut);
                }
            }
        });

        let mut process = PluginProcess {
            command: command.clone(),
            child,
            stdin,
            lines,
            stderr,
            functions: Vec::new(),
            timeout,
            transcript: record.then(Vec::new),
        };
        process.send(&Frame::Hello { protocol: PROTOCOL_VERSION })?;
        match process.receive()? {
            Frame::Manifest { protocol, functions } if protocol == PROTOCOL_VERSION => {
                for f in &functions {
                    f.validate().map_err(|e| process.violation(e.to_string()))?;
                }
                process.functions = functions;
                Ok(process)
            }
            Frame::Manifest { protocol, .. } => {
                Err(process.violation(format!("unsupported protocol version {protocol}")))
            }
            other => Err(process.violation(format!("expected manifest, got {}", frame_type(&other)))),
        }
    }

    pub fn command(&self) -> &PluginCommand {
        &self.command
    }

    pub fn functions(&self) -> &[FunctionManifest] {
        &self.functions
    }

    pub fn stderr(&self) -> String {
        self.stderr.lock().unwrap().clone()
    }

    pub fn transcript(&self) -> &[(Direction, String)] {
        self.transcript.as_deref().unwrap_or_default()
    }

    fn violation(&mut self, message: String) -> PluginError {
        // Give the stderr reader a moment to collect a traceback.
        thread::sleep(Duration::from_millis(50));
        self.kill();
        PluginError::Protocol { message, stderr: self.stderr() }
    }

    fn send(&mut self, frame: &Frame) -> Result<(), PluginError> {
        let line = frame.encode();
        if let Some(t) = &mut self.transcript {
            t.push((Direction::Sent, line.clone()));
        }
        let ok = match &mut self.stdin {
            Some(stdin) => writeln!(stdin, "{line}").and_then(|_| stdin.flush()).is_ok(),
            None => false,
        };
        if ok {
            Ok(())
        } else {
            self.wait_briefly();
            Err(PluginError::Exited { stderr: self.stderr() })
        }
    }

    fn receive(&mut self) -> Result<Frame, PluginError> {
        loop {
            match self.lines.recv_timeout(self.timeout) {
                Ok(line) if line.trim().is_empty() => continue,
                Ok(line) => {
                    if let Some(t) = &mut self.transcript {
                        t.push((Direction::Received, line.clone()));
                    }
                    return Frame::decode(&line).map_err(|m| self.violation(m));
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.kill();
                    return Err(PluginError::Timeout { secs: self.timeout.as_secs_f64(), stderr: self.stderr() });
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.wait_briefly();
                    return Err(PluginError::Exited { stderr: self.stderr() });
                }
            }
        }
    }

    /// Sends one `run` frame and waits for its result.
    pub fn run(&mut self, frame: RunFrame) -> Result<ResultFrame, PluginError> {
        let task_id = frame.task_id.clone();
        self.send(&Frame::Run(frame))?;
        match self.receive()? {
            Frame::Result(r) if r.task_id == task_id => Ok(r),
            Frame::Error { task_id: t, message } if t == task_id => Err(PluginError::Reported(message)),
            other => Err(self.violation(format!(
                "expected result for `{task_id}`, got {} for `{}`",
                frame_type(&other),
                frame_task_id(&other).unwrap_or("-")
            ))),
        }
    }

    /// True once the process has exited.
    pub fn has_exited(&mut self) -> bool {
        !matches!(self.child.try_wait(), Ok(None))
    }

    fn wait_briefly(&mut self) {
        for _ in 0..20 {
            if self.has_exited() {
                break;
            }
            thread::sleep(Duration::from_millis(10));
        }
        thread::sleep(Duration::from_millis(20));
    }

    fn kill(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// Closes stdin and waits for the plugin to exit, killing it after a grace period.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        self.stdin = None;
        for _ in 0..100 {
            if self.has_exited() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        self.kill();
    }
}

impl std::fmt::Debug for PluginProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PluginProcess")
            .field("command", &self.command)
            .field("pid", &self.child.id())
            .field("functions", &self.functions.len())
            .finish()
    }
}

impl Drop for PluginProcess {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            self.close();
        }
    }
}

fn frame_type(frame: &Frame) -> &'static str {
    match frame {
        Frame::Hello { .. } => "hello",
        Frame::Manifest { .. } => "manifest",
        Frame::Run(_) => "run",
        Frame::Result(_) => "result",
        Frame::Error { .. } => "error",
    }
}

fn frame_task_id(frame: &Frame) -> Option<&str> {
    match frame {
        Frame::Run(r) => Some(&r.task_id),
        Frame::Result(r) => Some(&r.task_id),
        Frame::Error { task_id, .. } => Some(task_id),
        _ => None,
    }
}

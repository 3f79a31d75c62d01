//! Server side of session channels: ptys, shells and commands.

mod client;
mod process;
mod pty;

pub use client::{exec_command, CommandOutput};
pub use process::{
    base_env, resolve_account, run_for_user, Account, ExecOptions, ExitOutcome, Launch, Privilege,
    RemoteProcess, DEFAULT_PATH_ENV,
};
pub use pty::{allocate_pty, Pty};

use std::time::Duration;

use bytes::Bytes;
use nix::sys::signal::Signal;
use tokio::io::{AsyncReadExt, AsyncWriteExt};

use crate::session::{Channel, ChannelReceiver, ChannelSender, CloseReason};
use crate::wire::{DataKind, Message};

/// How long output may keep flowing after the process exits (from
/// grandchildren still holding the descriptors).
const DRAIN_GRACE: Duration = Duration::from_secs(2);

const READ_CHUNK: usize = 32 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("window size {cols}x{rows} is invalid")]
    InvalidWindow { cols: u32, rows: u32 },
    #[error("pseudo-terminal: {0}")]
    Pty(String),
    #[error("no account named {0:?}")]
    UnknownUser(String),
    #[error("cannot start process: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("protocol violation: {0}")]
    Protocol(&'static str),
}

impl ExecError {
    pub fn close_reason(&self) -> CloseReason {
        match self {
            ExecError::UnknownUser(_) => CloseReason::UnknownUser,
            ExecError::Spawn(_) | ExecError::Pty(_) => CloseReason::SpawnFailed,
            ExecError::InvalidWindow { .. } | ExecError::Protocol(_) => CloseReason::ProtocolError,
        }
    }
}

struct PtyParams {
    term: String,
    cols: u32,
    rows: u32,
}

/// Drives one session channel to completion: optional `PtyRequest`, one
/// `ShellRequest` or `ExecRequest`, I/O relay, then exactly one
/// `ExitStatus` or `ExitSignal` before the channel is finished.
pub async fn handle_session_channel(mut ch: Channel, username: &str, opts: &ExecOptions) {
    let mut pty_params: Option<PtyParams> = None;
    let mut early_stdin: Vec<Bytes> = Vec::new();
    let launch = loop {
        match ch.next_message().await {
            Ok(Some(Message::PtyRequest { term, cols, rows })) if pty_params.is_none() => {
                if cols == 0 || rows == 0 {
                    return fail(ch, ExecError::InvalidWindow { cols, rows }).await;
                }
                pty_params = Some(PtyParams { term, cols, rows });
            }
            Ok(Some(Message::ShellRequest)) => break Launch::Shell,
            Ok(Some(Message::ExecRequest { command })) => break Launch::Command(command),
            Ok(Some(Message::WindowChange { cols, rows })) => {
                if let Some(p) = pty_params.as_mut() {
                    p.cols = cols;
                    p.rows = rows;
                }
            }
            Ok(Some(Message::Data { kind: DataKind::Stdin, payload })) => early_stdin.push(payload),
            Ok(Some(_)) => return fail(ch, ExecError::Protocol("unexpected message before request")).await,
            Ok(None) | Err(_) => return,
        }
    };
    let pty = match &pty_params {
        Some(p) => match allocate_pty(&p.term, p.cols, p.rows) {
            Ok(pty) => Some(pty),
            Err(e) => return fail(ch, e).await,
        },
        None => None,
    };
    let process = match run_for_user(username, &launch, &[], pty, opts) {
        Ok(p) => p,
        Err(e) => {
            tracing::info!(user = username, "session start failed: {e}");
            return fail(ch, e).await;
        }
    };
    let (tx, rx) = ch.split();
    relay(process, tx, rx, early_stdin).await;
}

async fn fail(ch: Channel, e: ExecError) {
    ch.reset(e.close_reason()).await;
}

async fn relay(mut process: RemoteProcess, tx: ChannelSender, rx: ChannelReceiver, early: Vec<Bytes>) {
    let pty = process.pty.take().map(std::sync::Arc::new);
    let mut outputs = tokio::task::JoinSet::new();
    if let Some(master) = pty.clone() {
        let tx = tx.clone();
        outputs.spawn(async move {
            let mut buf = vec![0u8; READ_CHUNK];
            loop {
                match master.read(&mut buf).await {
                    Ok(0) | Err(_) => return,
                    Ok(n) => {
                        if tx.send_data(DataKind::Stdout, &buf[..n]).await.is_err() {
                            return;
                        }
                    }
                }
            }
        });
    }
    if let Some(out) = process.stdout.take() {
        outputs.spawn(pump_pipe(out, tx.clone(), DataKind::Stdout));
    }
    if let Some(err) = process.stderr.take() {
        outputs.spawn(pump_pipe(err, tx.clone(), DataKind::Stderr));
    }

    let stdin = process.stdin.take();
    let pid = process.pid();
    let input = tokio::spawn(pump_input(rx, stdin, pty, early, pid, tx.clone()));

    let outcome = process.wait().await;
    let drained = tokio::time::timeout(DRAIN_GRACE, async {
        while outputs.join_next().await.is_some() {}
    })
    .await;
    if drained.is_err() {
        outputs.abort_all();
    }
    input.abort();
    let terminal = match outcome {
        Ok(ExitOutcome::Exited(code)) => Message::ExitStatus { code },
        Ok(ExitOutcome::Signaled { name, core_dumped }) => Message::ExitSignal {
            signal_name: name,
            core_dumped,
            error_message: String::new(),
        },
        Err(e) => {
            tracing::warn!("waiting for process {pid}: {e}");
            Message::ExitSignal {
                signal_name: "KILL".into(),
                core_dumped: false,
                error_message: e.to_string(),
            }
        }
    };
    if tx.send(&terminal).await.is_ok() {
        let _ = tx.finish().await;
    }
}

async fn pump_pipe<R: tokio::io::AsyncRead + Unpin>(mut r: R, tx: ChannelSender, kind: DataKind) {
    let mut buf = vec![0u8; READ_CHUNK];
    loop {
        match r.read(&mut buf).await {
            Ok(0) | Err(_) => return,
            Ok(n) => {
                if tx.send_data(kind, &buf[..n]).await.is_err() {
                    return;
                }
            }
        }
    }
}

enum Input {
    Pty(std::sync::Arc<pty::PtyMaster>),
    Pipe(tokio::process::ChildStdin),
    Closed,
}

impl Input {
    async fn write(&mut self, payload: &[u8]) {
        let r = match self {
            Input::Pty(m) => m.write_all(payload).await,
            Input::Pipe(s) => s.write_all(payload).await,
            Input::Closed => Ok(()),
        };
        if r.is_err() {
            *self = Input::Closed;
        }
    }
}

/// Client → process direction. End of channel closes stdin; a reset or a
/// lost connection hangs the process up.
async fn pump_input(
    mut rx: ChannelReceiver,
    stdin: Option<tokio::process::ChildStdin>,
    pty: Option<std::sync::Arc<pty::PtyMaster>>,
    early: Vec<Bytes>,
    pid: i32,
    tx: ChannelSender,
) {
    let hangup = || {
        let _ = nix::sys::signal::killpg(nix::unistd::Pid::from_raw(pid), Signal::SIGHUP);
    };
    let mut input = match (&pty, stdin) {
        (Some(m), _) => Input::Pty(m.clone()),
        (None, Some(s)) => Input::Pipe(s),
        (None, None) => Input::Closed,
    };
    for payload in early {
        input.write(&payload).await;
    }
    loop {
        match rx.next_message().await {
            Ok(Some(Message::Data { kind: DataKind::Stdin, payload })) => input.write(&payload).await,
            Ok(Some(Message::WindowChange { cols, rows })) => {
                if let Some(m) = &pty {
                    if let Err(e) = m.resize(cols, rows) {
                        tracing::debug!("ignoring window change: {e}");
                    }
                }
            }
            Ok(Some(Message::Data { .. })) => {}
            Ok(Some(_)) => {
                // A second request, or a message only the server sends.
                hangup();
                tx.reset(CloseReason::ProtocolError).await;
                return;
            }
            Ok(None) => {
                if let Input::Pipe(_) = input {
                    input = Input::Closed;
                }
                // keep the pty writable until the process ends
                std::future::pending::<()>().await;
            }
            Err(_) => {
                hangup();
                return;
            }
        }
    }
}

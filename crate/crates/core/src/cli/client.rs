use std::os::fd::AsRawFd;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::signal::unix::{signal, SignalKind};

use super::terminal::{self, RawMode};
use super::{CliError, ClientInvocation};
use crate::auth::SystemClock;
use crate::exec::ExitOutcome;
use crate::forward::{start_forward, ForwardHandle};
use crate::session::{connect, Conversation};
use crate::wire::{ChannelPreamble, DataKind, Message};

/// Exit code for failures on the client side (transport, auth, usage).
pub const EXIT_CLIENT_FAILURE: i32 = 255;

/// Runs one client invocation and returns the process exit code.
pub async fn run_client(inv: ClientInvocation) -> i32 {
    match run(inv).await {
        Ok(code) => code,
        Err(e) => {
            terminal::restore_terminal();
            eprintln!("quicshell: {e}");
            EXIT_CLIENT_FAILURE
        }
    }
}

async fn run(inv: ClientInvocation) -> Result<i32, CliError> {
    let credential = inv.credential.load(&inv.username, &inv.destination)?;
    let conv = connect(
        &inv.destination,
        &inv.username,
        &credential,
        &SystemClock,
        &inv.client_options(),
    )
    .await?;
    drop(credential);
    let mut forwards: Vec<ForwardHandle> = Vec::new();
    for spec in &inv.forwards {
        let h = start_forward(&conv, spec).await?;
        tracing::info!(%spec, local = %h.local_addr(), "forwarding");
        forwards.push(h);
    }
    let mut term = signal(SignalKind::terminate())?;
    let mut hup = signal(SignalKind::hangup())?;
    let code = if inv.open_session {
        tokio::select! {
            r = run_session(&conv, &inv) => r?,
            _ = term.recv() => EXIT_CLIENT_FAILURE,
            _ = hup.recv() => EXIT_CLIENT_FAILURE,
        }
    } else {
        tokio::select! {
            _ = conv.closed() => {
                eprintln!("quicshell: connection closed");
                EXIT_CLIENT_FAILURE
            }
            _ = tokio::signal::ctrl_c() => 0,
            _ = term.recv() => 0,
            _ = hup.recv() => 0,
        }
    };
    drop(forwards);
    conv.close_gracefully("client done").await;
    Ok(code)
}

async fn run_session(conv: &Conversation, inv: &ClientInvocation) -> Result<i32, CliError> {
    let stdin_fd = std::io::stdin().as_raw_fd();
    let interactive = terminal::is_tty(stdin_fd);
    let ch = conv.open_channel(ChannelPreamble::Session).await?;
    if inv.pty {
        let (cols, rows) = terminal::window_size(stdin_fd)
            .or_else(|| terminal::window_size(std::io::stdout().as_raw_fd()))
            .unwrap_or((80, 24));
        let term = std::env::var("TERM")
            .ok()
            .filter(|t| !t.is_empty())
            .unwrap_or_else(|| "xterm".into());
        ch.send(&Message::PtyRequest { term, cols, rows }).await?;
    }
    match &inv.command {
        Some(c) => ch.send(&Message::ExecRequest { command: c.clone() }).await?,
        None => ch.send(&Message::ShellRequest).await?,
    }
    let raw = if inv.pty && interactive {
        RawMode::enable(&std::io::stdin())?
    } else {
        None
    };
    let (tx, mut rx) = ch.split();

    let input = if inv.read_stdin {
        let tx = tx.clone();
        Some(tokio::spawn(async move {
            let mut stdin = tokio::io::stdin();
            let mut buf = vec![0u8; 16 * 1024];
            loop {
                match stdin.read(&mut buf).await {
                    Ok(0) | Err(_) => {
                        let _ = tx.finish().await;
                        return;
                    }
                    Ok(n) => {
                        if tx.send_data(DataKind::Stdin, &buf[..n]).await.is_err() {
                            return;
                        }
                    }
                }
            }
        }))
    } else {
        let _ = tx.finish().await;
        None
    };
    let resize = if raw.is_some() {
        let tx = tx.clone();
        let mut winch = signal(SignalKind::window_change())?;
        Some(tokio::spawn(async move {
            while winch.recv().await.is_some() {
                if let Some((cols, rows)) = terminal::window_size(stdin_fd) {
                    if tx.send(&Message::WindowChange { cols, rows }).await.is_err() {
                        return;
                    }
                }
            }
        }))
    } else {
        None
    };

    let mut stdout = tokio::io::stdout();
    let mut stderr = tokio::io::stderr();
    let mut outcome = None;
    let mut remote_error = None;
    let result = loop {
        match rx.next_message().await {
            Ok(Some(Message::Data { kind, payload })) => {
                let w = match kind {
                    DataKind::Stderr => stderr.write_all(&payload).await.and(stderr.flush().await),
                    _ => stdout.write_all(&payload).await.and(stdout.flush().await),
                };
                if w.is_err() {
                    rx.stop(crate::session::CloseReason::Hangup);
                    break Ok(());
                }
            }
            Ok(Some(Message::ExitStatus { code })) => outcome = Some(ExitOutcome::Exited(code)),
            Ok(Some(Message::ExitSignal {
                signal_name,
                core_dumped,
                error_message,
            })) => {
                if !error_message.is_empty() {
                    remote_error = Some(error_message);
                }
                outcome = Some(ExitOutcome::Signaled {
                    name: signal_name,
                    core_dumped,
                });
            }
            Ok(Some(_)) => {}
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        }
    };
    if let Some(t) = input {
        t.abort();
    }
    if let Some(t) = resize {
        t.abort();
    }
    drop(raw);
    if let Some(m) = remote_error {
        eprintln!("quicshell: remote: {m}");
    }
    match (outcome, result) {
        (Some(o), _) => Ok(o.local_exit_code()),
        (None, Err(e)) => Err(e.into()),
        (None, Ok(())) => {
            eprintln!("quicshell: session ended without an exit status");
            Ok(EXIT_CLIENT_FAILURE)
        }
    }
}

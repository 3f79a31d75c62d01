use crate::session::{ChannelError, Conversation};
use crate::wire::{ChannelPreamble, DataKind, Message};

use super::ExitOutcome;

/// Collected result of a remote command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub outcome: ExitOutcome,
}

/// Runs `command` on a new session channel with empty stdin and collects
/// its output.
pub async fn exec_command(conv: &Conversation, command: &str) -> Result<CommandOutput, ChannelError> {
    let mut ch = conv.open_channel(ChannelPreamble::Session).await?;
    ch.send(&Message::ExecRequest {
        command: command.to_string(),
    })
    .await?;
    ch.finish().await?;
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let mut outcome = None;
    while let Some(m) = ch.next_message().await? {
        match m {
            Message::Data { kind: DataKind::Stderr, payload } => stderr.extend_from_slice(&payload),
            Message::Data { payload, .. } => stdout.extend_from_slice(&payload),
            Message::ExitStatus { code } => outcome = Some(ExitOutcome::Exited(code)),
            Message::ExitSignal {
                signal_name,
                core_dumped,
                ..
            } => {
                outcome = Some(ExitOutcome::Signaled {
                    name: signal_name,
                    core_dumped,
                })
            }
            _ => return Err(ChannelError::Protocol("unexpected message from server".into())),
        }
    }
    let outcome =
        outcome.ok_or_else(|| ChannelError::Protocol("channel ended without exit status".into()))?;
    Ok(CommandOutput {
        stdout,
        stderr,
        outcome,
    })
}

//! The standard server behavior: sessions run processes, direct-tcp and
//! direct-udp channels are forwarded.

use async_trait::async_trait;

use crate::exec::{handle_session_channel, ExecOptions};
use crate::forward::{server_handle_tcp, server_handle_udp};
use crate::session::{Channel, ChannelHandler, CloseReason, Conversation};
use crate::wire::ChannelKind;

#[derive(Debug, Clone)]
pub struct Service {
    pub exec: ExecOptions,
    pub allow_forwarding: bool,
}

impl Default for Service {
    fn default() -> Self {
        Service {
            exec: ExecOptions::default(),
            allow_forwarding: true,
        }
    }
}

#[async_trait]
impl ChannelHandler for Service {
    async fn handle(&self, conv: Conversation, ch: Channel) {
        match ch.kind() {
            ChannelKind::Session => handle_session_channel(ch, conv.username(), &self.exec).await,
            _ if !self.allow_forwarding => ch.reset(CloseReason::Unsupported).await,
            ChannelKind::DirectTcp => server_handle_tcp(ch).await,
            ChannelKind::DirectUdp => server_handle_udp(conv, ch).await,
        }
    }
}

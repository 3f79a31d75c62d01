//! quicshell: remote shell, command execution and port forwarding carried
//! over HTTP/3 Extended CONNECT on QUIC.

pub mod wire;
pub mod auth;
pub mod h3;
pub mod session;
pub mod exec;
pub mod forward;
pub mod service;
pub mod cli;
pub mod bench;

//! Device/server offload protocol and its transports.

pub mod channel;
pub mod client;
pub mod server;
pub mod wire;

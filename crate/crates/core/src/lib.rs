//! Core of the OPC UA trust gateway.

pub mod cert;
pub mod codec;
pub mod config;
pub mod time;
pub mod dataplane;
pub mod controller;
pub mod ledger;
pub mod runtime;

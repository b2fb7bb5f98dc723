pub mod channels;
pub mod config;
pub mod crypto;
pub mod demo;
pub mod harness;
pub mod ledger;
pub mod loadgen;
pub mod risk;
pub mod roles;
pub mod wire;

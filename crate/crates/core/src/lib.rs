pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod harness;
pub mod manager;
pub mod packager;
pub mod tosca;
pub mod unit;
pub mod xmlrpc;

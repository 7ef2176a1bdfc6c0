//! HTTP service and command line for building, running and evaluating
//! classifiers. Both front ends drive the same [`service::Service`].

pub mod cli;
pub mod config;
pub mod error;
pub mod http;
pub mod service;

pub mod cache;
pub mod cli;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod timing;
pub mod trace;

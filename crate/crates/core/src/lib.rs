pub mod audit;
pub mod commands;
pub mod crypto;
pub mod engine;
pub mod lang;
pub mod merkle;
pub mod monitor;
pub mod partition;
pub mod sim;

pub mod analytics;
pub mod board;
pub mod engine;
pub mod net;
pub mod oracle;
pub mod persistence;
pub mod seed;
pub mod sim;

#[cfg(test)]
pub(crate) mod testutil;

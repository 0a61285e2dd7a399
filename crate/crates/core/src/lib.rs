pub mod cli;
pub mod clustering;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod expansion;
pub mod fusion;
pub mod metrics;
pub mod oracle;
pub mod planted;
pub mod selftest;

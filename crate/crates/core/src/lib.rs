pub mod gateway;
pub mod lingmetrics;
pub mod prompt;
pub mod runner;
pub mod scoring;
pub mod stats;

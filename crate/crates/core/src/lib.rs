pub mod cli;
pub mod consensus;
pub mod dag;
pub mod export;
pub mod layering;
pub mod ordering;
pub mod simnet;
pub mod stake;
pub mod testkit;
pub mod types;

//! Simulated institutions for the patient-chain federation: topology files,
//! service supervision, the two-institution scenario, the latency benchmark
//! and chain relocation.

pub mod bench;
pub mod deploy;
pub mod launcher;
pub mod plan;
pub mod relocate;
pub mod scenario;
pub mod topology;

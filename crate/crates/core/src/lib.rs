//! Aggregated active/reactive flexibility regions of distributed energy
//! resources behind a distribution-feeder head.

pub mod devices;
pub mod netmodel;
pub mod powerflow;
pub mod uncertainty;
pub mod socp;
pub mod drcc;
pub mod region;
pub mod validate;
pub mod ingest;
pub mod synth;

pub mod config;
pub mod cvdepth;
pub mod experiment;
pub mod ingest;
pub mod io;
pub mod report;
pub mod scenario;

pub mod engine;
pub mod ethernet;
pub mod manager;
pub mod monitor;
pub mod optical;
pub mod proto;
pub mod report;
pub mod scenario;
pub mod spectrum;
pub mod units;
pub mod vbvt;

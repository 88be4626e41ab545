pub mod experiment;
pub mod fl;
pub mod ids;
pub mod ledger;
pub mod opinion;
pub mod orchestrator;
pub mod seed;

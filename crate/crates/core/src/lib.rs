pub mod engine;
pub mod gateway;
pub mod prompting;
pub mod retrieval;
pub mod store;
pub mod task;

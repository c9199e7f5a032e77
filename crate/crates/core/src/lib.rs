pub mod spatial;
pub mod tensor;
pub mod token_bank;
pub mod metrics;
pub mod qa;
pub mod eval;
pub mod review;

pub mod cli;
pub mod corpus;
pub mod evalbench;
pub mod lvlm;
pub mod rng;
pub mod steering;
pub mod tensor;
pub mod train;

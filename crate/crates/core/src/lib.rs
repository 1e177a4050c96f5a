pub mod corpus;
pub mod docgraph;
pub mod evaluator;
pub mod model;
pub mod ndiff;
pub mod seeds;
pub mod synthetic;
pub mod trainer;

pub mod discretize;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod operators;
pub mod order;
pub mod qlearn;
pub mod viter;

pub mod autodiff;
pub mod env;
pub mod eval;
pub mod memory;
pub mod policy;
pub mod reachability;
pub mod rl;
pub mod scalar;
pub mod seeding;

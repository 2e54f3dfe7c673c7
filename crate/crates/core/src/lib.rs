//! Planner for split fine-tuning of large language models across user
//! devices and edge servers.

pub mod assoc_solver;
pub mod fpcore;
pub mod inner_solver;
pub mod lp;
pub mod matrix;
pub mod model;
pub mod orchestrator;
pub mod roots;
pub mod scenario_io;
pub mod stability_lab;

pub use matrix::Matrix;

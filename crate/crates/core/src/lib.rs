//! Signalized four-way intersection with mixed human-driven and automated
//! traffic, a delayed-action light controller and minimum-energy AV planning.

pub mod action;
pub mod config;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod idm;
pub mod learner;
pub mod planner;
pub mod report;
pub mod rng;

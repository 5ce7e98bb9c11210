//! Planar physics simulation and control stack for a reaction-wheel
//! stabilized bipedal hopper operating under low gravity.

pub mod cli;
pub mod config;
pub mod contact;
pub mod control;
pub mod dynamics;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod terrain;

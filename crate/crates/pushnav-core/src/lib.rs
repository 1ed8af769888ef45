//! Core library for desk-scale interactive navigation with an arm-pushing
//! legged manipulator: world model, motion planning, quasi-static pushing
//! physics, a goal-conditioned pushing environment, PPO training, and the
//! navigation state machine that ties them together.

pub mod navexec;
pub mod physics;
pub mod planner;
pub mod ppo;
pub mod pushenv;
pub mod render;
pub mod world;

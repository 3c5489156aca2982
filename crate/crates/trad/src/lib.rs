//! Step-wise thought retrieval and aligned-decision prompting for
//! sequential decision agents.
//!
//! The pipeline: a memory of expert trajectories is labeled offline with
//! pseudo-golden thoughts ([`agents::prepare_thoughts`]); at inference time
//! the agent reasons about its state, retrieves the most similar expert
//! steps by thought embedding ([`retrieve`]), expands each retrieved anchor
//! into a marked window of neighboring steps ([`align`]), and predicts the
//! next action from the assembled prompt ([`prompt`], [`backend`]).
//!
//! Everything runs offline against [`world::GridEnv`], a deterministic
//! text household simulator with a scripted expert, or against replay
//! datasets of web-navigation steps ([`evalkit`]).

pub mod agents;
pub mod align;
pub mod backend;
pub mod cli;
pub mod corpus;
pub mod embed;
pub mod evalkit;
pub mod par;
pub mod prompt;
pub mod retrieve;
pub mod world;

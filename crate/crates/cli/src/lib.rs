//! Command line and local annotation service for the dialogue generation
//! pipeline.

pub mod cli;
pub mod io;
pub mod ratings;
pub mod service;
pub mod split;

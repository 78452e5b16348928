pub mod bounds;
pub mod cli;
pub mod config;
pub mod lattice;
pub mod observables;
pub mod spectral;
pub mod states;
pub mod timeavg;

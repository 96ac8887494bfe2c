//! Document workflow engine: ISA hierarchies, a label lattice, access
//! control, hybrid routing and a tree-shaped document store behind an
//! event-sourced service.

pub mod access;
pub mod blob;
pub mod engine;
pub mod fixture;
pub mod isa;
pub mod lattice;
pub mod routing;
pub mod service;
pub mod snapshot;
pub mod store;

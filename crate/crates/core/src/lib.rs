pub mod agents;
pub mod analyzer;
pub mod blocks;
pub mod cascade;
pub mod directive;
pub mod evolve;
pub mod fastpath;
pub mod program;
pub mod source;
pub mod store;

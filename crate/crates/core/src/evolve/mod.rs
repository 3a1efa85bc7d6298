//! Island-model evolutionary search over annotated programs.

pub mod archive;
pub mod diff;
pub mod mutate;
pub mod params;
pub mod population;
pub mod run;

use thiserror::Error;

use crate::agents::ProviderError;
use crate::cascade::CascadeError;
use crate::store::{Candidate, EmbedError, StoreError};

pub use archive::{classify_strategy, Archive, Descriptor, Elite, StrategyClass};
pub use diff::{apply_diff, apply_hunks, looks_like_patch, parse_patch, Hunk, PatchError};
pub use mutate::{embedding_text, llm_mutate, mutation_prompt, parse_offspring, MutationContext, Offspring};
pub use params::{choose_phase, sample_mutation_form, FormWeights, Phase, SearchParams};
pub use population::{migrate, select_parent, Island, Member, MigrationEvent};
pub use run::{digest, run_evolution, Checkpoint, EvolutionOutcome, Evolver, CHECKPOINT_FILE, SCORES_FILE};

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid mutation weights: {0}")]
    InvalidWeights(String),
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("island population is empty")]
    EmptyIsland,
    #[error("mutation rejected: {0}")]
    MutationRejected(String),
    #[error("no candidate reached the benchmark level; returning seed {}:\n{summary}", seed.id)]
    BudgetExhaustedWithNoViable { seed: Box<Candidate>, summary: String },
    #[error("search needs at least one seed program")]
    NoSeeds,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("run directory: {0}")]
    Io(#[from] std::io::Error),
}

//! Evolutionary hyperparameter search.

pub mod evolve;
pub mod fitness;
pub mod genome;

pub use evolve::{evolve, EvoConfig, EvoState, GenerationRecord, Individual};
pub use fitness::{Evaluator, FitnessMode, FitnessRecord};
pub use genome::{crossover, decode, valid_patch_divs, Decoded, Domain, GeneSpec, GeneValue, Genome, SearchSpace};

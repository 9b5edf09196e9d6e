//! K-fold mean-F1 fitness with memoization, and an analytic stub landscape.

use std::collections::BTreeMap;

use super::genome::{decode, Genome, SearchSpace};
use crate::data::rng::mix;
use crate::error::{Error, Result};
use crate::metrics::fold_mean;
use crate::model::ModelConfig;
use crate::par;
use crate::train::{evaluate, kfold_indices, train, Dataset, StopReason, TrainConfig};

pub enum FitnessMode<'a> {
    /// `−Σ ((g_i − o_i)/(n_i − 1))²`: zero exactly at `optimum`, no training.
    Stub {
        optimum: Genome,
    },
    Train {
        data: &'a Dataset,
        folds: usize,
        epochs: usize,
        base_model: ModelConfig,
        base_train: TrainConfig,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitnessRecord {
    pub fitness: f64,
    pub fold_f1: Vec<f64>,
    /// Set when a fold diverged or could not be built (fitness 0).
    pub diagnostic: Option<String>,
    pub seed: u64,
}

pub struct Evaluator<'a> {
    pub space: SearchSpace,
    pub mode: FitnessMode<'a>,
    pub run_seed: u64,
    cache: BTreeMap<Genome, FitnessRecord>,
    evaluations: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(space: SearchSpace, mode: FitnessMode<'a>, run_seed: u64) -> Result<Self> {
        if let FitnessMode::Train { data, folds, .. } = &mode {
            if *folds < 2 || data.len() < *folds {
                return Err(Error::config(format!("fitness needs K >= 2 folds and at least K samples (K={folds}, n={})", data.len())));
            }
        }
        if let FitnessMode::Stub { optimum } = &mode {
            if !space.is_valid(optimum) {
                return Err(Error::config("stub optimum is outside the search space"));
            }
        }
        Ok(Self { space, mode, run_seed, cache: BTreeMap::new(), evaluations: 0 })
    }

    /// Fitness evaluations actually performed (cache misses).
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn seed_for(&self, genome: &Genome) -> u64 {
        mix(self.run_seed ^ genome.hash64())
    }

    pub fn cached(&self, genome: &Genome) -> Option<&FitnessRecord> {
        self.cache.get(genome)
    }

    fn compute(&self, genome: &Genome) -> Result<FitnessRecord> {
        let seed = self.seed_for(genome);
        match &self.mode {
            FitnessMode::Stub { optimum } => {
                let fitness = 0.0
                    - genome
                        .genes
                        .iter()
                        .zip(&optimum.genes)
                        .zip(&self.space.genes)
                        .map(|((&g, &o), spec)| {
                            let scale = (spec.domain.len().max(2) - 1) as f64;
                            ((g as f64 - o as f64) / scale).powi(2)
                        })
                        .sum::<f64>();
                Ok(FitnessRecord { fitness, fold_f1: Vec::new(), diagnostic: None, seed })
            }
            FitnessMode::Train { data, folds, epochs, base_model, base_train } => {
                let mut d = decode(&self.space, genome, base_model, base_train);
                d.model.seed = seed;
                d.train.seed = seed;
                d.train.epochs = *epochs;
                d.train.folds = *folds;
                let mut fold_f1 = Vec::with_capacity(*folds);
                for fold in kfold_indices(data.len(), *folds, self.run_seed)? {
                    let out = match train(&d.model, &d.train, data, &fold.train, None) {
                        Ok(out) => out,
                        Err(e @ (Error::Config(_) | Error::Numeric(_))) => return Ok(zero(seed, fold_f1, e.to_string())),
                        Err(e) => return Err(e),
                    };
                    if let StopReason::Diverged(msg) = out.stop {
                        return Ok(zero(seed, fold_f1, format!("diverged: {msg}")));
                    }
                    fold_f1.push(evaluate(&out.trainer.model, data, &fold.val)?.mean_f1()?);
                }
                Ok(FitnessRecord { fitness: fold_mean(&fold_f1)?, fold_f1, diagnostic: None, seed })
            }
        }
    }

    pub fn evaluate(&mut self, genome: &Genome) -> Result<FitnessRecord> {
        Ok(self.evaluate_many(std::slice::from_ref(genome))?.remove(0))
    }

    /// Evaluates distinct uncached genomes in parallel; results come back in
    /// input order and do not depend on the thread count.
    pub fn evaluate_many(&mut self, genomes: &[Genome]) -> Result<Vec<FitnessRecord>> {
        let mut todo: Vec<Genome> = genomes.iter().filter(|g| !self.cache.contains_key(*g)).cloned().collect();
        todo.sort();
        todo.dedup();
        let this = &*self;
        let results = par::map_slice(&todo, |g| this.compute(g));
        for (g, r) in todo.into_iter().zip(results) {
            self.cache.insert(g, r?);
            self.evaluations += 1;
        }
        Ok(genomes.iter().map(|g| self.cache[g].clone()).collect())
    }
}

fn zero(seed: u64, fold_f1: Vec<f64>, diagnostic: String) -> FitnessRecord {
    FitnessRecord { fitness: 0.0, fold_f1, diagnostic: Some(diagnostic), seed }
}

//! Generational GA: tournament selection, elitism, uniform crossover, then
//! mutation of a share of the offspring. Ordered genes mutate by stepping to
//! a neighbouring grid value (creep), and offspring repeating an already
//! scored genome are redrawn. The full state after each generation
//! serializes to JSON, and a resumed run replays exactly.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fitness::Evaluator;
use super::genome::{crossover, Genome, SearchSpace};
use crate::data::rng::{fnv1a64, mix};
use crate::data::SplitMix64;
use crate::error::{Error, Result};
use crate::textfmt::{self, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvoConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub elitism: usize,
    /// Probability an offspring is mutated at all.
    pub mutant_prob: f64,
    /// Per-gene resample probability inside a mutation.
    pub mutation_prob: f64,
    /// Share of ordered-gene mutations that step to a neighbouring value.
    pub creep_prob: f64,
    /// Redraw offspring already in the generation or already evaluated.
    pub unique: bool,
    /// Probability an offspring is a crossover rather than a copy.
    pub crossover_prob: f64,
    pub seed: u64,
    pub folds: usize,
    /// Epochs per fitness training.
    pub budget_epochs: usize,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            population: 12,
            generations: 10,
            tournament: 4,
            elitism: 1,
            mutant_prob: 0.5,
            mutation_prob: 0.05,
            creep_prob: 1.0,
            unique: true,
            crossover_prob: 0.9,
            seed: 0,
            folds: 2,
            budget_epochs: 3,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.elitism >= self.population || self.tournament == 0 {
            return Err(Error::config(format!(
                "need population >= 2, elitism < population and tournament >= 1 (got {}, {}, {})",
                self.population, self.elitism, self.tournament
            )));
        }
        if [self.mutant_prob, self.mutation_prob, self.creep_prob].iter().any(|p| !(0.0..=1.0).contains(p)) || !(0.0..=1.0).contains(&self.crossover_prob) {
            return Err(Error::config("variation probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best: Genome,
    /// Seed of the variation stream that produced this generation.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvoState {
    pub config: EvoConfig,
    pub space: SearchSpace,
    /// Last completed generation; 0 is the random initial population.
    pub generation: usize,
    pub population: Vec<Individual>,
    pub log: Vec<GenerationRecord>,
    /// Every genome scored so far, so a resumed run redraws the same repeats.
    pub evaluated: BTreeSet<Genome>,
}

fn generation_seed(seed: u64, generation: usize) -> u64 {
    mix(seed ^ fnv1a64(format!("generation/{generation}").as_bytes()))
}

/// Indices by descending fitness, ties broken by position.
fn ranking(pop: &[Individual]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.sort_by(|&a, &b| pop[b].fitness.total_cmp(&pop[a].fitness).then(a.cmp(&b)));
    idx
}

impl EvoState {
    /// Random initial population (generation 0), evaluated.
    pub fn init(config: &EvoConfig, eval: &mut Evaluator) -> Result<Self> {
        config.validate()?;
        let seed = generation_seed(config.seed, 0);
        let mut rng = SplitMix64::new(seed);
        let genomes: Vec<Genome> = (0..config.population).map(|_| eval.space.random(&mut rng)).collect();
        let evaluated = genomes.iter().cloned().collect();
        let population = score(genomes, eval)?;
        let mut state = Self { config: config.clone(), space: eval.space.clone(), generation: 0, population, log: Vec::new(), evaluated };
        state.record(seed);
        Ok(state)
    }

    fn record(&mut self, seed: u64) {
        let best = &self.population[ranking(&self.population)[0]];
        let mean = self.population.iter().map(|i| i.fitness).sum::<f64>() / self.population.len() as f64;
        self.log.push(GenerationRecord { generation: self.generation, best_fitness: best.fitness, mean_fitness: mean, best: best.genome.clone(), seed });
    }

    pub fn done(&self) -> bool {
        self.generation >= self.config.generations
    }

    pub fn best(&self) -> &Individual {
        &self.population[ranking(&self.population)[0]]
    }

    fn tournament(&self, rng: &mut SplitMix64) -> &Genome {
        let n = self.population.len() as u64;
        let winner = (0..self.config.tournament)
            .map(|_| rng.below(n) as usize)
            .min_by(|&a, &b| self.population[b].fitness.total_cmp(&self.population[a].fitness).then(a.cmp(&b)))
            .expect("tournament >= 1");
        &self.population[winner].genome
    }

    /// Breeds and evaluates the next generation.
    pub fn step(&mut self, eval: &mut Evaluator) -> Result<()> {
        let generation = self.generation + 1;
        let seed = generation_seed(self.config.seed, generation);
        let mut rng = SplitMix64::new(seed);
        let order = ranking(&self.population);
        let mut next: Vec<Genome> = order[..self.config.elitism].iter().map(|&i| self.population[i].genome.clone()).collect();
        let mut attempts = 0;
        while next.len() < self.config.population {
            let a = self.tournament(&mut rng).clone();
            let b = self.tournament(&mut rng).clone();
            let child = if rng.unit() < self.config.crossover_prob { crossover(&a, &b, 0.5, &mut rng) } else { a };
            let child = if rng.unit() < self.config.mutant_prob {
                self.space.mutate_with(&child, self.config.mutation_prob, self.config.creep_prob, &mut rng)
            } else {
                child
            };
            attempts += 1;
            let stale = self.config.unique && (next.contains(&child) || self.evaluated.contains(&child));
            if !stale || attempts > 50 * self.config.population {
                next.push(child);
            }
        }
        self.evaluated.extend(next.iter().cloned());
        self.population = score(next, eval)?;
        self.generation = generation;
        self.record(seed);
        Ok(())
    }

    /// Runs to `config.generations`, saving after every generation.
    pub fn run(&mut self, eval: &mut Evaluator, checkpoint: Option<&Path>) -> Result<()> {
        if let Some(p) = checkpoint {
            self.save(p)?;
        }
        while !self.done() {
            self.step(eval)?;
            if let Some(p) = checkpoint {
                self.save(p)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(text).map_err(|e| Error::Load(format!("evolution state: {e}")))?;
        state.config.validate()?;
        Ok(state)
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Generation log: one record per generation with its best genome.
    pub fn log_text(&self) -> String {
        let recs: Vec<Record> = self
            .log
            .iter()
            .map(|g| {
                Record::new("generation")
                    .with("generation", g.generation)
                    .with("best_fitness", g.best_fitness)
                    .with("mean_fitness", g.mean_fitness)
                    .with("seed", g.seed)
                    .with("genome_hash", format!("{:016x}", g.best.hash64()))
                    .with("genome", self.space.describe(&g.best))
            })
            .collect();
        textfmt::write("evolution", &recs)
    }
}

fn score(genomes: Vec<Genome>, eval: &mut Evaluator) -> Result<Vec<Individual>> {
    let recs = eval.evaluate_many(&genomes)?;
    Ok(genomes.into_iter().zip(recs).map(|(genome, r)| Individual { genome, fitness: r.fitness }).collect())
}

/// Fresh run from `config`.
pub fn evolve(config: &EvoConfig, eval: &mut Evaluator, checkpoint: Option<&Path>) -> Result<EvoState> {
    let mut state = EvoState::init(config, eval)?;
    state.run(eval, checkpoint)?;
    Ok(state)
}

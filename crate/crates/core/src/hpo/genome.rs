//! Per-family search spaces, genomes, variation operators and decoding.
//!
//! Every gene ranges over a small declared set, so a genome is a vector of
//! indices into those sets. Decoding maps it onto a base configuration and
//! repairs combinations the architecture cannot build.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::rng::{fnv1a64, mix};
use crate::data::SplitMix64;
use crate::loss::LossKind;
use crate::model::{Family, ModelConfig};
use crate::style::PatchGeometry;
use crate::train::{OptimizerKind, Schedule, TrainConfig};
use crate::vision::{check_block_locality, EncoderConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Ints(Vec<usize>),
    Floats(Vec<f64>),
    Bool,
}

impl Domain {
    pub fn len(&self) -> usize {
        match self {
            Domain::Ints(v) => v.len(),
            Domain::Floats(v) => v.len(),
            Domain::Bool => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneSpec {
    pub name: String,
    pub domain: Domain,
}

fn ints(name: &str, v: &[usize]) -> GeneSpec {
    GeneSpec { name: name.into(), domain: Domain::Ints(v.to_vec()) }
}

fn floats(name: &str, v: &[f64]) -> GeneSpec {
    GeneSpec { name: name.into(), domain: Domain::Floats(v.to_vec()) }
}

fn flag(name: &str) -> GeneSpec {
    GeneSpec { name: name.into(), domain: Domain::Bool }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub family: Family,
    pub genes: Vec<GeneSpec>,
}

const BATCH: [usize; 3] = [8, 16, 32];
const SGD_LR: [f64; 5] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
const ADAMW_LR: [f64; 5] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];

impl SearchSpace {
    /// Desk-scale domains for the genes each family evolves.
    pub fn for_family(family: Family) -> Self {
        let genes = match family {
            Family::Rtm | Family::Rtmg => {
                let mut g = vec![
                    ints("truncate_layer", &[1, 2, 3]),
                    ints("batch_size", &BATCH),
                    floats("lr", &SGD_LR),
                    ints("hidden_dims", &[16, 32, 64]),
                    ints("num_layers", &[0, 1, 2]),
                    flag("use_attention"),
                ];
                if family == Family::Rtmg {
                    g.push(ints("gram_matrix_size", &[4, 8, 16]));
                }
                g
            }
            Family::Pm => vec![ints("batch_size", &BATCH), floats("lr", &ADAMW_LR), ints("patch_size", &[2, 4, 8])],
            Family::Pmg => vec![
                ints("batch_size", &BATCH),
                floats("lr", &ADAMW_LR),
                floats("weight_decay", &[0.0, 1e-4, 1e-3, 1e-2]),
                ints("patch_size", &[2, 4, 8]),
                ints("patch_div", &[1, 2, 3, 4, 5, 6, 8]),
                ints("ndf", &[4, 8, 16]),
                ints("gram_channels", &[4, 8, 16]),
                ints("d_model", &[16, 32, 64]),
                ints("refiner_layers", &[1, 2]),
                ints("refiner_heads", &[1, 2, 4]),
                flag("use_token_attention"),
                flag("use_channel_attention"),
                flag("use_focal"),
                floats("focal_gamma", &[0.5, 1.0, 2.0, 3.0]),
            ],
        };
        Self { family, genes }
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.genes.iter().position(|g| g.name == name)
    }

    pub fn random(&self, rng: &mut SplitMix64) -> Genome {
        Genome { genes: self.genes.iter().map(|g| rng.below(g.domain.len() as u64) as usize).collect() }
    }

    /// Genome from explicit values; `None` when a value is outside its domain.
    pub fn genome(&self, values: &[(&str, GeneValue)]) -> Option<Genome> {
        let mut genes = vec![0; self.len()];
        for (name, v) in values {
            let i = self.index_of(name)?;
            genes[i] = match (&self.genes[i].domain, v) {
                (Domain::Ints(d), GeneValue::Int(x)) => d.iter().position(|y| y == x)?,
                (Domain::Floats(d), GeneValue::Float(x)) => d.iter().position(|y| y == x)?,
                (Domain::Bool, GeneValue::Bool(b)) => *b as usize,
                _ => return None,
            };
        }
        Some(Genome { genes })
    }

    pub fn value(&self, genome: &Genome, name: &str) -> GeneValue {
        let i = self.index_of(name).unwrap_or_else(|| panic!("no gene `{name}` for {:?}", self.family));
        match &self.genes[i].domain {
            Domain::Ints(d) => GeneValue::Int(d[genome.genes[i]]),
            Domain::Floats(d) => GeneValue::Float(d[genome.genes[i]]),
            Domain::Bool => GeneValue::Bool(genome.genes[i] == 1),
        }
    }

    pub fn is_valid(&self, genome: &Genome) -> bool {
        genome.genes.len() == self.len() && genome.genes.iter().zip(&self.genes).all(|(&i, g)| i < g.domain.len())
    }

    /// `name=value` pairs, comma separated.
    pub fn describe(&self, genome: &Genome) -> String {
        self.genes.iter().map(|g| format!("{}={}", g.name, self.value(genome, &g.name))).collect::<Vec<_>>().join(",")
    }

    /// Resamples each gene with probability `p`, always to a different value.
    pub fn mutate(&self, genome: &Genome, p: f64, rng: &mut SplitMix64) -> Genome {
        self.mutate_with(genome, p, 0.0, rng)
    }

    /// As [`SearchSpace::mutate`], except that an ordered gene picked for
    /// mutation steps to a neighbouring value with probability `creep`.
    pub fn mutate_with(&self, genome: &Genome, p: f64, creep: f64, rng: &mut SplitMix64) -> Genome {
        let mut child = genome.clone();
        for (g, spec) in child.genes.iter_mut().zip(&self.genes) {
            let n = spec.domain.len();
            if n < 2 || rng.unit() >= p {
                continue;
            }
            let ordered = !matches!(spec.domain, Domain::Bool);
            if ordered && n > 2 && rng.unit() < creep {
                *g = match *g {
                    0 => 1,
                    i if i == n - 1 => i - 1,
                    i if rng.below(2) == 0 => i - 1,
                    i => i + 1,
                };
            } else {
                let shift = 1 + rng.below(n as u64 - 1) as usize;
                *g = (*g + shift) % n;
            }
        }
        child
    }
}

/// Uniform crossover: each gene is taken from `b` with probability `p`.
pub fn crossover(a: &Genome, b: &Genome, p: f64, rng: &mut SplitMix64) -> Genome {
    Genome { genes: a.genes.iter().zip(&b.genes).map(|(&x, &y)| if rng.unit() < p { y } else { x }).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneValue {
    Int(usize),
    Float(f64),
    Bool(bool),
}

impl GeneValue {
    pub fn int(self) -> usize {
        match self {
            GeneValue::Int(v) => v,
            other => panic!("expected an integer gene, got {other:?}"),
        }
    }
    pub fn float(self) -> f64 {
        match self {
            GeneValue::Float(v) => v,
            other => panic!("expected a real gene, got {other:?}"),
        }
    }
    pub fn flag(self) -> bool {
        match self {
            GeneValue::Bool(v) => v,
            other => panic!("expected a boolean gene, got {other:?}"),
        }
    }
}

impl fmt::Display for GeneValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneValue::Int(v) => write!(f, "{v}"),
            GeneValue::Float(v) => write!(f, "{v:e}"),
            GeneValue::Bool(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Genome {
    pub genes: Vec<usize>,
}

impl Genome {
    /// Stable content hash, used for memoization and fitness seeds.
    pub fn hash64(&self) -> u64 {
        self.genes.iter().fold(fnv1a64(b"genome"), |h, &g| mix(h ^ g as u64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// One line per repaired gene.
    pub repairs: Vec<String>,
}

/// Nearest candidate to `want`, ties towards the smaller value.
fn nearest(want: usize, candidates: &[usize]) -> Option<usize> {
    candidates.iter().copied().min_by_key(|&c| (c.abs_diff(want), c))
}

/// `patch_div` values that tile the trunk map with local blocks.
pub fn valid_patch_divs(model: &ModelConfig) -> Vec<usize> {
    let Ok((_, h, w)) = model.encoder.output_shape(model.input_size, model.input_size) else { return Vec::new() };
    (1..=h.min(w))
        .filter(|&d| {
            PatchGeometry::new(h, w, d).is_ok_and(|g| check_block_locality(&model.encoder.conv_path(), (model.input_size, model.input_size), g.rows).is_ok())
        })
        .collect()
}

/// Maps a genome onto `base`/`base_train`, repairing invalid combinations.
pub fn decode(space: &SearchSpace, genome: &Genome, base: &ModelConfig, base_train: &TrainConfig) -> Decoded {
    let v = |name: &str| space.value(genome, name);
    let mut model = ModelConfig { family: space.family, ..base.clone() };
    let mut train = base_train.clone();
    let mut repairs = Vec::new();
    train.batch_size = v("batch_size").int();
    train.lr = v("lr").float();
    match space.family {
        Family::Rtm | Family::Rtmg => {
            train.optimizer = OptimizerKind::SgdMomentum;
            train.schedule = Schedule::Constant;
            train.momentum = 0.9;
            let widths = match &base.encoder {
                EncoderConfig::Residual { widths, .. } => widths.clone(),
                _ => vec![8, 16, 32],
            };
            let mut truncate = v("truncate_layer").int();
            if truncate > widths.len() {
                repairs.push(format!("truncate_layer {truncate} -> {} (encoder has {} stages)", widths.len(), widths.len()));
                truncate = widths.len();
            }
            model.encoder = EncoderConfig::Residual { in_channels: 3, widths, blocks_per_stage: 1, truncate_after_layer: truncate };
            model.hidden_dims = v("hidden_dims").int();
            model.num_layers = v("num_layers").int();
            model.use_attention = v("use_attention").flag();
            if space.family == Family::Rtmg {
                model.gram_matrix_size = v("gram_matrix_size").int();
            }
        }
        Family::Pm | Family::Pmg => {
            train.optimizer = OptimizerKind::Adamw;
            train.schedule = Schedule::Cosine;
            let ndf = if space.family == Family::Pmg {
                v("ndf").int()
            } else if let EncoderConfig::Patchgan { ndf, .. } = base.encoder {
                ndf
            } else {
                8
            };
            model.encoder = EncoderConfig::Patchgan { in_channels: 3, ndf, patch_size: v("patch_size").int(), extra_layers: 1 };
        }
    }
    if space.family == Family::Pmg {
        train.weight_decay = v("weight_decay").float();
        model.gram_channels = v("gram_channels").int();
        model.d_model = v("d_model").int();
        model.refiner_layers = if v("use_token_attention").flag() { v("refiner_layers").int() } else { 0 };
        let heads = v("refiner_heads").int();
        model.refiner_heads = heads;
        if model.refiner_layers > 0 && !model.d_model.is_multiple_of(heads) {
            let divisors: Vec<usize> = (1..=model.d_model).filter(|h| model.d_model.is_multiple_of(*h)).collect();
            model.refiner_heads = nearest(heads, &divisors).expect("1 divides");
            repairs.push(format!("refiner_heads {heads} -> {} (must divide d_model {})", model.refiner_heads, model.d_model));
        }
        model.use_channel_attention = v("use_channel_attention").flag();
        model.loss.kind = if v("use_focal").flag() { LossKind::Focal { gamma: v("focal_gamma").float() } } else { LossKind::WeightedCe };
        let want = v("patch_div").int();
        let divs = valid_patch_divs(&model);
        match nearest(want, &divs) {
            Some(d) if d != want => {
                repairs.push(format!("patch_div {want} -> {d} (nearest valid block grid)"));
                model.patch_div = d;
            }
            Some(d) => model.patch_div = d,
            None => {
                repairs.push(format!("patch_div {want} has no valid grid for patch_size {}; kept", v("patch_size").int()));
                model.patch_div = want;
            }
        }
    }
    Decoded { model, train, repairs }
}

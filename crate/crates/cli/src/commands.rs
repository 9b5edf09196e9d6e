//! Subcommand implementations; each maps onto one library operation.

use std::path::{Path, PathBuf};

use clap::Args;
use wxstyle::bench::{bench_subsets, check_monotonicity, load_frames, BenchConfig, FrameSource, Pipeline};
use wxstyle::data::{
    decode_image, generate_splits, id_list, parse_id_list, read_manifest, resize_bilinear, synth_style_dataset, LabelMap, SampleRecord, SplitMix64, SplitSpec,
    SynthConfig, Taxonomy,
};
use wxstyle::hpo::{decode, Evaluator, EvoConfig, EvoState, FitnessMode, SearchSpace};
use wxstyle::metrics::{fold_mean, MetricsReport};
use wxstyle::model::{Family, Model};
use wxstyle::textfmt::{self, Record};
use wxstyle::train::{
    evaluate as eval_model, evaluate_mapped, history_to_text, kfold_indices, load_checkpoint, save_checkpoint, train as train_model, Checkpoint, Dataset,
    StopReason,
};
use wxstyle::Error;

use crate::config::{write_run_manifest, Hyper};
use crate::Failure;

type Res = Result<(), Failure>;

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn split_names(list: &str) -> Vec<String> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory holding `manifest.csv` (and optionally `taxonomy.txt`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Manifest path; images resolve relative to its directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Taxonomy file; defaults to `taxonomy.txt` beside the manifest, else the weather taxonomy.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

struct Records {
    taxonomy: Taxonomy,
    records: Vec<SampleRecord>,
    base: PathBuf,
}

impl DataArgs {
    fn load(&self) -> Result<Records, Failure> {
        let manifest = match (&self.manifest, &self.data) {
            (Some(m), _) => m.clone(),
            (None, Some(d)) => d.join("manifest.csv"),
            (None, None) => return Err(Failure::Usage("one of --data or --manifest is required".into())),
        };
        let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let beside = base.join("taxonomy.txt");
        let taxonomy = match &self.taxonomy {
            Some(t) => Taxonomy::load(t)?,
            None if beside.exists() => Taxonomy::load(&beside)?,
            None => Taxonomy::weather_default(),
        };
        let records = read_manifest(&manifest, &taxonomy)?;
        Ok(Records { taxonomy, records, base })
    }
}

fn read_ids(path: Option<&PathBuf>, records: &[SampleRecord]) -> Result<Vec<usize>, Failure> {
    match path {
        Some(p) => Ok(parse_id_list(&std::fs::read_to_string(p).map_err(Error::from)?, records)?),
        None => Ok((0..records.len()).collect()),
    }
}

// synth

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Geometric class-frequency ratio (1 = balanced).
    #[arg(long, default_value_t = 1.0)]
    pub imbalance: f64,
    #[arg(long, default_value_t = 10)]
    pub sources: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn synth(a: SynthArgs) -> Res {
    let cfg = SynthConfig { size: a.size, count: a.count, imbalance: a.imbalance, sources: a.sources };
    let d = synth_style_dataset(&cfg, a.seed)?;
    d.write_to(&a.out)?;
    let extra = [("count", a.count.to_string()), ("size", a.size.to_string()), ("imbalance", a.imbalance.to_string()), ("sources", a.sources.to_string())];
    write_run_manifest(&a.out, "synth", a.seed, None, &extra)?;
    println!("wrote {} images to {}", d.records.len(), a.out.display());
    Ok(())
}

// split

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    /// Minimum frame distance between selected frames of one source.
    #[arg(long, default_value_t = 1)]
    pub min_gap: u64,
    #[arg(long)]
    pub train_quota: Option<usize>,
    #[arg(long)]
    pub test_quota: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn split(a: SplitArgs) -> Res {
    let r = a.data.load()?;
    let spec = SplitSpec { test_fraction: a.test_fraction, min_gap: a.min_gap, train_quota: a.train_quota, test_quota: a.test_quota, seed: a.seed };
    let s = generate_splits(&r.records, &spec)?;
    write(&a.out.join("train_ids.txt"), &id_list(&r.records, &s.train))?;
    write(&a.out.join("test_ids.txt"), &id_list(&r.records, &s.test))?;
    write(&a.out.join("split_report.txt"), &s.report.to_text())?;
    write_run_manifest(&a.out, "split", a.seed, None, &[])?;
    for w in &s.report.warnings {
        eprintln!("warning: {w}");
    }
    println!("train {} / test {}", s.train.len(), s.test.len());
    Ok(())
}

// train

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// TOML hyperparameters or a previous `run.txt`; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long)]
    pub train_ids: Option<PathBuf>,
    /// Held-out ids for early stopping and the reported metrics.
    #[arg(long)]
    pub val_ids: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn resolved_hyper(config: Option<&PathBuf>, flags: &Hyper) -> Result<Hyper, Failure> {
    let base = match config {
        Some(p) => Hyper::load(p)?,
        None => Hyper::default(),
    };
    Ok(base.overlay(flags))
}

pub fn train(a: TrainArgs) -> Res {
    let r = a.data.load()?;
    let hyper = resolved_hyper(a.config.as_ref(), &a.hyper)?;
    let (mcfg, tcfg) = hyper.resolve(r.taxonomy.clone())?;
    let data = Dataset::load(&r.records, &r.taxonomy, &r.base, mcfg.input_size)?;
    let train_ids = read_ids(a.train_ids.as_ref(), &r.records)?;
    let val_ids = a.val_ids.as_ref().map(|p| read_ids(Some(p), &r.records)).transpose()?;
    let mut extra = Vec::new();
    if tcfg.folds >= 2 {
        let mut recs = Vec::new();
        let mut f1s = Vec::new();
        for (k, fold) in kfold_indices(train_ids.len(), tcfg.folds, tcfg.seed)?.iter().enumerate() {
            let tr: Vec<usize> = fold.train.iter().map(|&i| train_ids[i]).collect();
            let va: Vec<usize> = fold.val.iter().map(|&i| train_ids[i]).collect();
            let out = train_model(&mcfg, &tcfg, &data, &tr, None)?;
            let f1 = eval_model(&out.trainer.model, &data, &va)?.mean_f1()?;
            recs.push(Record::new("fold").with("fold", k).with("mean_f1", f1));
            f1s.push(f1);
        }
        let mean = fold_mean(&f1s)?;
        recs.push(Record::new("summary").with("folds", tcfg.folds).with("mean_f1", mean));
        write(&a.out.join("cv.txt"), &textfmt::write("cv", &recs))?;
        println!("{}-fold mean F1 {mean:.6}", tcfg.folds);
        extra.push(("cv_mean_f1", mean.to_string()));
    }
    let out = train_model(&mcfg, &tcfg, &data, &train_ids, val_ids.as_deref())?;
    if let StopReason::Diverged(msg) = &out.stop {
        eprintln!("warning: training diverged ({msg}); saved the last good parameters");
    }
    let report = match &out.val_report {
        Some(r) => r.clone(),
        None => eval_model(&out.trainer.model, &data, &train_ids)?,
    };
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    let ck = Checkpoint::from_model(&out.trainer.model, Some(&tcfg), &out.trainer.class_weights, &out.trainer.history);
    save_checkpoint(&a.out.join("checkpoint.wsck"), &ck)?;
    write(&a.out.join("history.txt"), &history_to_text(&out.trainer.history))?;
    write(&a.out.join("metrics.txt"), &report.to_text())?;
    let f1 = report.mean_f1()?;
    extra.push(("final_mean_f1", f1.to_string()));
    extra.push(("stop", format!("{:?}", out.stop)));
    let extra: Vec<(&str, String)> = extra.into_iter().collect();
    write_run_manifest(&a.out, "train", tcfg.seed, Some(&Hyper::from_resolved(&mcfg, &tcfg)), &extra)?;
    println!("final mean F1 {f1:.6}");
    if let StopReason::Diverged(msg) = out.stop {
        return Err(Error::Numeric(format!("training diverged: {msg}")).into());
    }
    Ok(())
}

// evaluate

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// Comma-separated heads to keep enabled.
    #[arg(long)]
    pub heads: Option<String>,
    /// Label map from the model taxonomy to the dataset taxonomy.
    #[arg(long)]
    pub label_map: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_model(path: &Path, heads: Option<&str>) -> Result<Model<f32>, Failure> {
    let mut model = load_checkpoint(path)?.to_model()?;
    if let Some(h) = heads {
        let names = split_names(h);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        model.set_enabled_heads(&refs)?;
    }
    Ok(model)
}

pub fn evaluate(a: EvaluateArgs) -> Res {
    let model = load_model(&a.checkpoint, a.heads.as_deref())?;
    let r = a.data.load()?;
    let data = Dataset::load(&r.records, &r.taxonomy, &r.base, model.config.input_size)?;
    let ids = read_ids(a.ids.as_ref(), &r.records)?;
    let report: MetricsReport = match &a.label_map {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(Error::from)?;
            let map = LabelMap::parse(&text, model.config.taxonomy.clone(), r.taxonomy.clone())?;
            evaluate_mapped(&model, &data, &ids, &map)?
        }
        None => eval_model(&model, &data, &ids)?,
    };
    let text = report.to_text();
    if let Some(out) = &a.out {
        write(out, &text)?;
    }
    print!("{text}");
    Ok(())
}

// infer

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub heads: Option<String>,
    /// PPM/PGM images.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

pub fn infer(a: InferArgs) -> Res {
    let model = load_model(&a.checkpoint, a.heads.as_deref())?;
    let s = model.config.input_size;
    for path in &a.images {
        let img = resize_bilinear(&decode_image::<f32>(path)?, s, s)?.reshape(&[1, 3, s, s])?;
        if a.images.len() > 1 {
            println!("# {}", path.display());
        }
        for (head, logits) in model.heads.iter().zip(model.infer(&img)?) {
            let Some(l) = logits else { continue };
            let row: Vec<f64> = l.data().iter().map(|&v| v as f64).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let (k, best) = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            let task = model.config.taxonomy.task(&head.task)?;
            println!("{}\t{}\t{:.4}", head.task, task.classes[k], (best - max).exp() / z);
        }
    }
    Ok(())
}

// hpo

#[derive(Args, Debug)]
pub struct HpoArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "pmg")]
    pub family: Family,
    /// Analytic fitness with a seeded optimum instead of training.
    #[arg(long)]
    pub stub: bool,
    #[arg(long, default_value_t = 12)]
    pub population: usize,
    #[arg(long, default_value_t = 10)]
    pub generations: usize,
    #[arg(long, default_value_t = 4)]
    pub tournament: usize,
    #[arg(long, default_value_t = 1)]
    pub elitism: usize,
    /// Probability an offspring is mutated at all.
    #[arg(long, default_value_t = 0.5)]
    pub mutant: f64,
    /// Per-gene resample probability inside a mutation.
    #[arg(long, default_value_t = 0.05)]
    pub mutation: f64,
    /// Share of ordered-gene mutations that step to a neighbouring value.
    #[arg(long, default_value_t = 1.0)]
    pub creep: f64,
    /// Allow offspring that repeat an already evaluated genome.
    #[arg(long)]
    pub allow_repeats: bool,
    #[arg(long, default_value_t = 0.9)]
    pub crossover: f64,
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    /// Epochs per fitness training.
    #[arg(long, default_value_t = 3)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Continue from `evolution_state.json` in `--out` when present.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn hpo(a: HpoArgs) -> Res {
    let cfg = EvoConfig {
        population: a.population,
        generations: a.generations,
        tournament: a.tournament,
        elitism: a.elitism,
        mutant_prob: a.mutant,
        mutation_prob: a.mutation,
        creep_prob: a.creep,
        unique: !a.allow_repeats,
        crossover_prob: a.crossover,
        seed: a.seed,
        folds: a.folds,
        budget_epochs: a.budget,
    };
    cfg.validate()?;
    let space = SearchSpace::for_family(a.family);
    let r = if a.stub { None } else { Some(a.data.load()?) };
    let base_flags = Hyper { family: Some(a.family), input_size: a.input_size, seed: Some(a.seed), ..Hyper::default() };
    let taxonomy = r.as_ref().map_or_else(Taxonomy::synthetic, |r| r.taxonomy.clone());
    let (base_model, base_train) = base_flags.resolve(taxonomy)?;
    let data = match &r {
        Some(r) => Some(Dataset::load(&r.records, &r.taxonomy, &r.base, base_model.input_size)?),
        None => None,
    };
    let mode = match &data {
        Some(d) => FitnessMode::Train { data: d, folds: a.folds, epochs: a.budget, base_model: base_model.clone(), base_train: base_train.clone() },
        None => FitnessMode::Stub { optimum: space.random(&mut SplitMix64::derive(a.seed, "stub-optimum")) },
    };
    let mut ev = Evaluator::new(space.clone(), mode, a.seed)?;
    let state_path = a.out.join("evolution_state.json");
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    let mut state = if a.resume && state_path.exists() {
        let s = EvoState::load(&state_path)?;
        if s.config != cfg || s.space != space {
            return Err(Error::Config("saved evolution state was produced with different settings".into()).into());
        }
        s
    } else {
        EvoState::init(&cfg, &mut ev)?
    };
    state.run(&mut ev, Some(&state_path))?;
    write(&a.out.join("evolution.txt"), &state.log_text())?;
    let best = state.best().clone();
    let d = decode(&space, &best.genome, &base_model, &base_train);
    for rep in &d.repairs {
        eprintln!("repair: {rep}");
    }
    let toml_text = toml::to_string(&Hyper::from_resolved(&d.model, &d.train)).map_err(|e| Error::Config(e.to_string()))?;
    write(&a.out.join("best.toml"), &toml_text)?;
    let extra = [("best_fitness", best.fitness.to_string()), ("evaluations", ev.evaluations().to_string()), ("stub", a.stub.to_string())];
    write_run_manifest(&a.out, "hpo", a.seed, None, &extra)?;
    println!("best fitness {:.6}: {}", best.fitness, space.describe(&best.genome));
    Ok(())
}

// bench

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of PPM/PGM frames replayed as a stream.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Number of synthetic frames when no directory is given.
    #[arg(long, default_value_t = 16)]
    pub synthetic: usize,
    #[arg(long, default_value_t = 96)]
    pub frame_size: usize,
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 2.0)]
    pub warmup: f64,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    #[arg(long, default_value = "serial")]
    pub pipeline: Pipeline,
    /// Comma-separated heads to enable.
    #[arg(long)]
    pub heads: Option<String>,
    /// Nested head subsets, largest first, separated by `;`; adds a monotonicity test.
    #[arg(long)]
    pub nested: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench(a: BenchArgs) -> Res {
    let mut model = load_model(&a.checkpoint, None)?;
    let source = match &a.frames {
        Some(dir) => FrameSource::Directory(dir.clone()),
        None => FrameSource::Synthetic { frames: a.synthetic, seed: a.seed },
    };
    let cfg = BenchConfig {
        source,
        frame_size: a.frame_size,
        duration: a.duration,
        warmup: a.warmup,
        heads: a.heads.as_deref().map(split_names),
        repetitions: a.repetitions,
        pipeline: a.pipeline,
    };
    cfg.validate()?;
    let subsets: Vec<Option<Vec<String>>> = match &a.nested {
        Some(n) => n.split(';').map(|s| Some(split_names(s))).collect(),
        None => vec![cfg.heads.clone()],
    };
    let frames = load_frames(&cfg)?;
    let reports = bench_subsets(&mut model, &cfg, &frames, &subsets)?;
    let mut recs: Vec<Record> = reports.iter().flat_map(|r| r.records()).collect();
    if a.nested.is_some() {
        for c in check_monotonicity(&reports)? {
            recs.push(
                Record::new("monotonicity")
                    .with("more_heads", c.more_heads)
                    .with("fewer_heads", c.fewer_heads)
                    .with("mean_more", c.mean_more)
                    .with("mean_fewer", c.mean_fewer)
                    .with("t", c.t)
                    .with("p_value", c.p_value)
                    .with("holds", c.holds),
            );
        }
    }
    let text = textfmt::write("bench", &recs);
    if let Some(out) = &a.out {
        write(out, &text)?;
    }
    print!("{text}");
    Ok(())
}

// inspect

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also list every tensor with its offset.
    #[arg(long)]
    pub tensors: bool,
}

pub fn inspect(a: InspectArgs) -> Res {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = ck.to_model()?;
    let h = &ck.header;
    let m = &h.model;
    let mut recs = vec![Record::new("checkpoint")
        .with("format_version", h.format_version)
        .with("family", format!("{:?}", m.family).to_lowercase())
        .with("input_size", m.input_size)
        .with("tasks", m.taxonomy.num_tasks())
        .with("classes", m.taxonomy.num_classes())
        .with("seed", h.seed)
        .with("epochs_trained", h.history.len())
        .with("values", ck.blob.len())];
    for (g, n) in model.group_counts() {
        recs.push(Record::new("group").with("name", format!("{g:?}").to_lowercase()).with("params", n));
    }
    recs.push(Record::new("shared").with("params", model.shared_param_count()));
    for ((task, n), on) in model.head_counts().into_iter().zip(&h.enabled) {
        recs.push(Record::new("head").with("task", task).with("params", n).with("enabled", on));
    }
    if a.tensors {
        for p in &h.params {
            let shape: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
            recs.push(
                Record::new("tensor").with("name", &p.name).with("shape", shape.join("x")).with("offset", p.offset).with("len", p.len).with("buffer", p.buffer),
            );
        }
    }
    print!("{}", textfmt::write("inspect", &recs));
    Ok(())
}

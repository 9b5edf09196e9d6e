//! Frame-wise throughput bench with head toggling.
//!
//! Frames are processed one at a time (batch 1). Frames finishing inside
//! `[warmup, duration]` count, so `fps = frames / (duration − warmup)`.
//! The serial pipeline times every stage on one thread; the async pipeline
//! decodes the next frame on a second thread while the current one runs
//! (at most one decoded frame waits in the hand-off).

use std::path::PathBuf;
use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::autodiff::Tensor;
use crate::data::rng::mix;
use crate::data::synth::{render, SceneParams};
use crate::data::{decode_pnm, encode_ppm, resize_bilinear};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::textfmt::{self, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Serial,
    Async,
}

impl std::str::FromStr for Pipeline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "serial" => Ok(Self::Serial),
            "async" => Ok(Self::Async),
            _ => Err(Error::config(format!("unknown pipeline `{s}` (serial|async)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameSource {
    /// Encoded synthetic frames replayed in a loop.
    Synthetic { frames: usize, seed: u64 },
    /// Every `.ppm`/`.pgm` file in a directory, in name order, replayed.
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub source: FrameSource,
    /// Side of the square frames before resizing to the model input.
    pub frame_size: usize,
    pub duration: f64,
    pub warmup: f64,
    /// `None` keeps the checkpoint's enabled heads.
    pub heads: Option<Vec<String>>,
    pub repetitions: usize,
    pub pipeline: Pipeline,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            source: FrameSource::Synthetic { frames: 16, seed: 0 },
            frame_size: 96,
            duration: 3.0,
            warmup: 0.5,
            heads: None,
            repetitions: 3,
            pipeline: Pipeline::Serial,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup >= 0.0 && self.duration > self.warmup) {
            return Err(Error::config(format!("need duration > warmup >= 0 (got {} and {})", self.duration, self.warmup)));
        }
        if self.repetitions == 0 || self.frame_size == 0 {
            return Err(Error::config("repetitions and frame_size must be positive"));
        }
        Ok(())
    }
}

/// Mean per-frame milliseconds of each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageLatency {
    pub decode_ms: f64,
    pub encode_ms: f64,
    pub heads_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub heads: Vec<String>,
    /// Throughput of each repetition.
    pub fps: Vec<f64>,
    pub frames: usize,
    pub latency: StageLatency,
    pub pipeline: Pipeline,
}

impl BenchReport {
    pub fn mean_fps(&self) -> f64 {
        self.fps.iter().sum::<f64>() / self.fps.len() as f64
    }

    /// Sample standard deviation; absent below two repetitions.
    pub fn std_fps(&self) -> Option<f64> {
        let n = self.fps.len();
        (n >= 2).then(|| {
            let m = self.mean_fps();
            (self.fps.iter().map(|f| (f - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        })
    }

    pub fn records(&self) -> Vec<Record> {
        let mut r = Record::new("bench")
            .with("heads", self.heads.join(","))
            .with("pipeline", format!("{:?}", self.pipeline).to_lowercase())
            .with("repetitions", self.fps.len())
            .with("frames", self.frames)
            .with("mean_fps", self.mean_fps());
        if let Some(s) = self.std_fps() {
            r = r.with("std_fps", s);
        }
        let l = self.latency;
        vec![r, Record::new("stage").with("decode_ms", l.decode_ms).with("encode_ms", l.encode_ms).with("heads_ms", l.heads_ms)]
    }

    pub fn to_text(&self) -> String {
        textfmt::write("bench", &self.records())
    }
}

/// Encoded frames the bench decodes on every iteration.
pub fn load_frames(cfg: &BenchConfig) -> Result<Vec<Vec<u8>>> {
    match &cfg.source {
        FrameSource::Synthetic { frames, seed } => (0..*frames)
            .map(|i| {
                let p = SceneParams { seed: mix(seed ^ i as u64), tint: i % 3, grain: i / 3 % 3, veil: i % 2 };
                encode_ppm(&render(cfg.frame_size, &p))
            })
            .collect(),
        FrameSource::Directory(dir) => {
            let mut paths: Vec<PathBuf> =
                std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|e| e == "ppm" || e == "pgm")).collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::data(format!("no .ppm/.pgm frames in {}", dir.display())));
            }
            paths.iter().map(|p| std::fs::read(p).map_err(Error::from)).collect()
        }
    }
}

fn prepare(bytes: &[u8], size: usize) -> Result<Tensor<f32>> {
    let img = decode_pnm::<f32>(bytes)?;
    let img = if img.dim(1) == size && img.dim(2) == size { img } else { resize_bilinear(&img, size, size)? };
    img.reshape(&[1, 3, size, size])
}

struct Tally {
    frames: usize,
    decode: Duration,
    encode: Duration,
    heads: Duration,
}

fn run_once(model: &Model<f32>, frames: &[Vec<u8>], cfg: &BenchConfig) -> Result<Tally> {
    let size = model.config.input_size;
    let (warmup, end) = (Duration::from_secs_f64(cfg.warmup), Duration::from_secs_f64(cfg.duration));
    let mut t = Tally { frames: 0, decode: Duration::ZERO, encode: Duration::ZERO, heads: Duration::ZERO };
    let start = Instant::now();
    let infer = |x: Tensor<f32>, decode: Duration, t: &mut Tally| -> Result<bool> {
        let a = Instant::now();
        let tokens = model.tokens(&x)?;
        let b = Instant::now();
        std::hint::black_box(model.infer_heads(&tokens)?);
        let c = Instant::now();
        let done = c - start;
        if done > end {
            return Ok(false);
        }
        if done >= warmup {
            t.frames += 1;
            t.decode += decode;
            t.encode += b - a;
            t.heads += c - b;
        }
        Ok(true)
    };
    match cfg.pipeline {
        Pipeline::Serial => {
            for bytes in frames.iter().cycle() {
                let a = Instant::now();
                let x = prepare(bytes, size)?;
                if !infer(x, a.elapsed(), &mut t)? {
                    break;
                }
            }
            Ok(t)
        }
        Pipeline::Async => std::thread::scope(|s| {
            let (tx, rx) = sync_channel::<Result<(Tensor<f32>, Duration)>>(1);
            s.spawn(move || {
                for bytes in frames.iter().cycle() {
                    let a = Instant::now();
                    let item = prepare(bytes, size).map(|x| (x, a.elapsed()));
                    if tx.send(item).is_err() {
                        break;
                    }
                }
            });
            for item in rx.iter() {
                let (x, decode) = item?;
                if !infer(x, decode, &mut t)? {
                    break;
                }
            }
            Ok(t)
        }),
    }
}

/// Runs the bench with `cfg.heads` enabled; the model's head state is
/// restored afterwards and its parameters are only read.
pub fn bench_throughput(model: &mut Model<f32>, cfg: &BenchConfig) -> Result<BenchReport> {
    let frames = load_frames(cfg)?;
    Ok(bench_subsets(model, cfg, &frames, std::slice::from_ref(&cfg.heads))?.remove(0))
}

/// Benches several head subsets with repetitions interleaved across
/// subsets, so drift in machine load spreads evenly.
pub fn bench_subsets(model: &mut Model<f32>, cfg: &BenchConfig, frames: &[Vec<u8>], subsets: &[Option<Vec<String>>]) -> Result<Vec<BenchReport>> {
    cfg.validate()?;
    let saved: Vec<bool> = model.heads.iter().map(|h| h.enabled).collect();
    let result = (|| {
        let names: Vec<Vec<String>> = subsets
            .iter()
            .map(|s| match s {
                Some(list) => {
                    for n in list {
                        model.task_index(n).map_err(|_| Error::config(format!("checkpoint has no head `{n}`")))?;
                    }
                    Ok(list.clone())
                }
                None => Ok(model.enabled_tasks().iter().map(|s| s.to_string()).collect()),
            })
            .collect::<Result<_>>()?;
        let mut tallies: Vec<Vec<Tally>> = subsets.iter().map(|_| Vec::new()).collect();
        for _ in 0..cfg.repetitions {
            for (i, heads) in names.iter().enumerate() {
                let refs: Vec<&str> = heads.iter().map(String::as_str).collect();
                model.set_enabled_heads(&refs)?;
                tallies[i].push(run_once(model, frames, cfg)?);
            }
        }
        let window = cfg.duration - cfg.warmup;
        Ok(names
            .into_iter()
            .zip(tallies)
            .map(|(heads, reps)| {
                let frames: usize = reps.iter().map(|t| t.frames).sum();
                let per = |f: fn(&Tally) -> Duration| reps.iter().map(f).sum::<Duration>().as_secs_f64() * 1e3 / frames.max(1) as f64;
                BenchReport {
                    heads,
                    fps: reps.iter().map(|t| t.frames as f64 / window).collect(),
                    frames,
                    latency: StageLatency { decode_ms: per(|t| t.decode), encode_ms: per(|t| t.encode), heads_ms: per(|t| t.heads) },
                    pipeline: cfg.pipeline,
                }
            })
            .collect())
    })();
    for (h, on) in model.heads.iter_mut().zip(saved) {
        h.enabled = on;
    }
    result
}

/// One-sided Welch test of `H1: mean(fewer) < mean(more)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityCheck {
    pub more_heads: usize,
    pub fewer_heads: usize,
    pub mean_more: f64,
    pub mean_fewer: f64,
    pub t: f64,
    pub p_value: f64,
    /// No significant throughput drop at `alpha`.
    pub holds: bool,
}

pub const MONOTONICITY_ALPHA: f64 = 0.05;

pub fn welch_one_sided(more: &[f64], fewer: &[f64]) -> Result<(f64, f64)> {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (n, m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    if more.len() < 2 || fewer.len() < 2 {
        return Err(Error::config("the monotonicity test needs at least 2 repetitions"));
    }
    let ((n1, m1, v1), (n2, m2, v2)) = (stats(fewer), stats(more));
    let se2 = v1 / n1 + v2 / n2;
    if se2 == 0.0 {
        // Degenerate spread: decide on the means alone.
        return Ok(if m1 < m2 { (f64::NEG_INFINITY, 0.0) } else { (f64::INFINITY, 1.0) });
    }
    let t = (m1 - m2) / se2.sqrt();
    let df = se2.powi(2) / ((v1 / n1).powi(2) / (n1 - 1.0) + (v2 / n2).powi(2) / (n2 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(format!("t distribution: {e}")))?;
    Ok((t, dist.cdf(t)))
}

/// Checks consecutive pairs of reports ordered from most to fewest heads.
pub fn check_monotonicity(nested: &[BenchReport]) -> Result<Vec<MonotonicityCheck>> {
    nested
        .windows(2)
        .map(|w| {
            let (more, fewer) = (&w[0], &w[1]);
            if !fewer.heads.iter().all(|h| more.heads.contains(h)) {
                return Err(Error::config("head subsets are not nested"));
            }
            let (t, p) = welch_one_sided(&more.fps, &fewer.fps)?;
            Ok(MonotonicityCheck {
                more_heads: more.heads.len(),
                fewer_heads: fewer.heads.len(),
                mean_more: more.mean_fps(),
                mean_fewer: fewer.mean_fps(),
                t,
                p_value: p,
                holds: p >= MONOTONICITY_ALPHA,
            })
        })
        .collect()
}

//! Synthetic style dataset: smooth random scenes whose labels live purely in
//! global appearance statistics.
//!
//! * Tint: per-channel gain (warm, neutral, cool).
//! * Grain: unit-variance luminance noise with correlation length 1, 4 or 16 px.
//! * Veil: a low-contrast haze that scales luminance deviations by [`VEIL_KEEP`].
//!
//! Every image draws from its own SplitMix64 stream, so rendering order and
//! thread count never affect the bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image::{decode_pnm, encode_ppm};
use super::manifest::{write_manifest, SampleRecord};
use super::rng::SplitMix64;
use super::taxonomy::Taxonomy;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::par;

pub const TINT_GAINS: [[f64; 3]; 3] = [[1.12, 1.0, 0.82], [1.0, 1.0, 1.0], [0.82, 1.0, 1.12]];
pub const GRAIN_LENGTHS: [usize; 3] = [1, 4, 16];
pub const GRAIN_AMPLITUDE: f64 = 0.12;
pub const VEIL_KEEP: f64 = 0.45;
pub const VEIL_LEVEL: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Square image side.
    pub size: usize,
    pub count: usize,
    /// Class `k` of every task gets a share proportional to `imbalance^k`;
    /// `1.0` is balanced.
    pub imbalance: f64,
    /// Images are dealt round-robin to this many pseudo-videos.
    pub sources: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { size: 64, count: 600, imbalance: 1.0, sources: 10 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.sources == 0 {
            return Err(Error::config("synthetic dataset needs a positive image and source count"));
        }
        if self.size < 16 {
            return Err(Error::config(format!("synthetic images must be at least 16 px, got {}", self.size)));
        }
        if !(self.imbalance > 0.0 && self.imbalance <= 1.0) {
            return Err(Error::config(format!("imbalance {} outside (0, 1]", self.imbalance)));
        }
        Ok(())
    }
}

/// Generation parameters of one image, enough to re-render it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub seed: u64,
    pub tint: usize,
    pub grain: usize,
    pub veil: usize,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub taxonomy: Taxonomy,
    pub records: Vec<SampleRecord>,
    /// Quantized exactly like the files on disk.
    pub images: Vec<Tensor<f32>>,
    pub params: Vec<SceneParams>,
}

/// Largest-remainder class counts for `n` items with shares `imbalance^k`.
pub fn class_quotas(n: usize, classes: usize, imbalance: f64) -> Vec<usize> {
    let shares: Vec<f64> = (0..classes).map(|k| imbalance.powi(k as i32)).collect();
    let total: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        counts[k] += 1;
    }
    counts
}

/// Value noise on a grid of pitch `length`, bilinearly interpolated and
/// standardized to zero mean and unit variance.
fn grain_field(size: usize, length: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let cells = size / length + 2;
    let grid: Vec<f64> = (0..cells * cells).map(|_| 2.0 * rng.unit() - 1.0).collect();
    let mut field = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (gy, gx) = (y as f64 / length as f64, x as f64 / length as f64);
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
            let g = |r: usize, c: usize| grid[r * cells + c];
            field[y * size + x] = (g(y0, x0) * (1.0 - fx) + g(y0, x0 + 1) * fx) * (1.0 - fy) + (g(y0 + 1, x0) * (1.0 - fx) + g(y0 + 1, x0 + 1) * fx) * fy;
        }
    }
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    field.iter_mut().for_each(|v| *v = (*v - mean) / std);
    field
}

/// Renders one image in `[0, 1]`, before quantization.
pub fn render(size: usize, p: &SceneParams) -> Tensor<f64> {
    let mut rng = SplitMix64::new(p.seed);
    let tau = std::f64::consts::TAU;
    let amplitude = 0.25 + 0.1 * rng.unit();
    // Three shared waves form the scene; one faint wave per channel adds colour variation.
    let mut waves = |count: usize| -> Vec<[f64; 3]> { (0..count).map(|_| [4.0 * rng.unit() - 2.0, 4.0 * rng.unit() - 2.0, tau * rng.unit()]).collect() };
    let shared = waves(3);
    let own = waves(3);
    let grain = grain_field(size, GRAIN_LENGTHS[p.grain], &mut rng);
    let s = size as f64;
    let wave = |w: &[f64; 3], x: f64, y: f64| (tau * (w[0] * x + w[1] * y) / s + w[2]).sin();
    let plane = size * size;
    Tensor::from_fn(&[3, size, size], |i| {
        let (c, y, x) = (i / plane, (i / size) % size, i % size);
        let (xf, yf) = (x as f64, y as f64);
        let lum = 0.5 + amplitude * shared.iter().map(|w| wave(w, xf, yf)).sum::<f64>() / 3.0;
        let mut v = lum + 0.05 * wave(&own[c], xf, yf) + GRAIN_AMPLITUDE * grain[y * size + x];
        v *= TINT_GAINS[p.tint][c];
        if p.veil == 1 {
            v = VEIL_KEEP * v + (1.0 - VEIL_KEEP) * VEIL_LEVEL;
        }
        v.clamp(0.0, 1.0)
    })
}

/// Standard deviation of the channel-mean luminance.
pub fn contrast(img: &Tensor<f32>) -> f64 {
    let plane = img.dim(1) * img.dim(2);
    let d = img.data();
    let lum: Vec<f64> = (0..plane).map(|p| (0..3).map(|c| d[c * plane + p] as f64).sum::<f64>() / 3.0).collect();
    let mean = lum.iter().sum::<f64>() / plane as f64;
    (lum.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64).sqrt()
}

fn image_path(i: usize) -> String {
    format!("images/{i:05}.ppm")
}

pub fn synth_style_dataset(cfg: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    cfg.validate()?;
    let taxonomy = Taxonomy::synthetic();
    let mut columns = Vec::new();
    for t in &taxonomy.tasks {
        let quotas = class_quotas(cfg.count, t.num_classes(), cfg.imbalance);
        let mut col: Vec<usize> = quotas.iter().enumerate().flat_map(|(k, &q)| std::iter::repeat_n(k, q)).collect();
        SplitMix64::derive(seed, &format!("labels/{}", t.name)).shuffle(&mut col);
        columns.push(col);
    }
    let params: Vec<SceneParams> = (0..cfg.count)
        .map(|i| SceneParams { seed: SplitMix64::derive(seed, &format!("scene/{i}")).next(), tint: columns[0][i], grain: columns[1][i], veil: columns[2][i] })
        .collect();
    let images =
        par::map_slice(&params, |p| -> Result<Tensor<f32>> { decode_pnm(&encode_ppm(&render(cfg.size, p))?) }).into_iter().collect::<Result<Vec<_>>>()?;
    let records = params
        .iter()
        .enumerate()
        .map(|(i, p)| SampleRecord {
            path: image_path(i),
            source: format!("synth{:02}", i % cfg.sources),
            frame: (i / cfg.sources) as u64,
            labels: vec![p.tint as i64, p.grain as i64, p.veil as i64],
        })
        .collect();
    Ok(SynthDataset { taxonomy, records, images, params })
}

impl SynthDataset {
    /// Writes `images/*.ppm`, `manifest.csv` and `taxonomy.txt` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("images"))?;
        for (r, img) in self.records.iter().zip(&self.images) {
            std::fs::write(r.resolve(dir), encode_ppm(img)?)?;
        }
        std::fs::write(dir.join("manifest.csv"), write_manifest(&self.records, &self.taxonomy)?)?;
        std::fs::write(dir.join("taxonomy.txt"), self.taxonomy.to_text())?;
        Ok(())
    }
}

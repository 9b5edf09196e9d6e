//! Acceptance suite. Every check prints one `PASS` or `FAIL` line with the
//! measured quantities, then asserts.
//!
//! Tests take a shared lock so timing-sensitive checks (throughput, runtime
//! budgets) never overlap with the training runs.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wxstyle::autodiff::layer::{Layer, Linear, Mode, Module, ParamKind};
use wxstyle::autodiff::{grad_check, grad_check_layer, softmax_backward, softmax_lastdim, GradCheckOptions, GradCheckReport, Objective, Tensor};
use wxstyle::bench::{bench_subsets, check_monotonicity, load_frames, BenchConfig, FrameSource, Pipeline};
use wxstyle::data::{generate_splits, id_list, synth_style_dataset, SampleRecord, SplitMix64, SplitSpec, SynthConfig, Taxonomy};
use wxstyle::heads::{AttentionOptions, AttentionPool, Classifier, MultiHeadSelfAttention, RefinerConfig, SeGate, TokenRefiner};
use wxstyle::hpo::{evolve, Evaluator, EvoConfig, EvoState, FitnessMode, SearchSpace};
use wxstyle::loss::{focal_loss, weighted_ce, IGNORE};
use wxstyle::metrics::task_metrics;
use wxstyle::model::{build_model, Family, Model, ModelConfig};
use wxstyle::style::{channel_projection, gram_global, gram_local, gram_matrix, LocalGram, StyleTokenizer};
use wxstyle::train::{evaluate, load_checkpoint, save_checkpoint, Checkpoint, Dataset, EpochRecord, TrainConfig, Trainer};
use wxstyle::vision::{receptive_field, BatchNorm2d, Conv2d, ConvSpec, Rect};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(criterion: &str, pass: bool, detail: impl Display) -> bool {
    println!("{} criterion {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

/// `L = Σ r ⊙ softmax(x / τ)` over the last axis.
struct SoftmaxProbe {
    temperature: f64,
    r: Tensor<f64>,
}

impl Objective for SoftmaxProbe {
    fn loss(&mut self, x: &Tensor<f64>) -> wxstyle::Result<f64> {
        let y = softmax_lastdim(x, self.temperature)?;
        Ok(y.data().iter().zip(self.r.data()).map(|(a, b)| a * b).sum())
    }
    fn loss_and_grad(&mut self, x: &Tensor<f64>) -> wxstyle::Result<(f64, Tensor<f64>)> {
        let y = softmax_lastdim(x, self.temperature)?;
        let l = y.data().iter().zip(self.r.data()).map(|(a, b)| a * b).sum();
        Ok((l, softmax_backward(&y, &self.r, self.temperature)?))
    }
    fn visit_params_mut(&mut self, _: &mut dyn FnMut(&str, &mut Tensor<f64>, ParamKind)) {}
}

/// A task loss seen as a function of the logits.
struct LossProbe {
    labels: Vec<i64>,
    weights: Vec<f64>,
    gamma: f64,
}

impl Objective for LossProbe {
    fn loss(&mut self, x: &Tensor<f64>) -> wxstyle::Result<f64> {
        Ok(focal_loss(x, &self.labels, &self.weights, self.gamma)?.value)
    }
    fn loss_and_grad(&mut self, x: &Tensor<f64>) -> wxstyle::Result<(f64, Tensor<f64>)> {
        let out = focal_loss(x, &self.labels, &self.weights, self.gamma)?;
        Ok((out.value, out.grad))
    }
    fn visit_params_mut(&mut self, _: &mut dyn FnMut(&str, &mut Tensor<f64>, ParamKind)) {}
}

/// Sum of per-task weighted CE plus the attention penalty, through the whole model.
struct EndToEnd<'a> {
    model: &'a mut Model<f64>,
    labels: Vec<Vec<i64>>,
}

impl EndToEnd<'_> {
    fn run(&mut self, x: &Tensor<f64>, with_grad: bool) -> wxstyle::Result<(f64, Option<Tensor<f64>>)> {
        self.model.zero_grads();
        let out = self.model.forward(x, Mode::Train)?;
        let mut total = 0.0;
        let mut grads = Vec::new();
        for (o, l) in out.iter().zip(&self.labels) {
            let o = o.as_ref().expect("all heads enabled");
            let lo = weighted_ce(o, l, &vec![1.0; o.dim(1)])?;
            total += lo.value;
            grads.push(Some(lo.grad));
        }
        let dx = if with_grad { self.model.backward(&grads, true)? } else { None };
        Ok((total + self.model.aux_loss(), dx))
    }
}

impl Objective for EndToEnd<'_> {
    fn loss(&mut self, x: &Tensor<f64>) -> wxstyle::Result<f64> {
        Ok(self.run(x, false)?.0)
    }
    fn loss_and_grad(&mut self, x: &Tensor<f64>) -> wxstyle::Result<(f64, Tensor<f64>)> {
        let (l, dx) = self.run(x, true)?;
        Ok((l, dx.expect("input gradient requested")))
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>, ParamKind)) {
        self.model.visit_mut("", f);
    }
}

fn layer_check(layer: &mut impl Layer<f64>, shape: &[usize], mode: Mode, seed: u64) -> GradCheckReport {
    grad_check_layer(layer, &uniform(shape, seed ^ 0x51), mode, &GradCheckOptions::default(), seed).expect("gradient check runs")
}

fn layer_reports(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let mut conv = Conv2d::<f64>::new(ConvSpec::new(3, 4, 3, 2, 1), true, &mut r).unwrap();
    out.push(("conv", layer_check(&mut conv, &[2, 3, 7, 7], Mode::Train, seed)));
    let mut stem = Conv2d::<f64>::new(ConvSpec::new(3, 4, 4, 4, 0), true, &mut r).unwrap();
    out.push(("conv k4 s4", layer_check(&mut stem, &[2, 3, 8, 8], Mode::Train, seed)));
    let mut bn = BatchNorm2d::<f64>::new(3);
    out.push(("batchnorm train", layer_check(&mut bn, &[4, 3, 3, 3], Mode::Train, seed)));
    let mut bn_eval = BatchNorm2d::<f64>::new(3);
    out.push(("batchnorm eval", layer_check(&mut bn_eval, &[4, 3, 3, 3], Mode::Eval, seed)));
    let mut lin = Linear::<f64>::new(5, 4, true, &mut r);
    out.push(("linear", layer_check(&mut lin, &[3, 5], Mode::Train, seed)));
    let mut cls = Classifier::<f64>::new(6, 5, 2, 3, &mut r);
    out.push(("classifier mlp", layer_check(&mut cls, &[3, 6], Mode::Train, seed)));

    let mut sm = SoftmaxProbe { temperature: 0.7, r: uniform(&[3, 5], seed ^ 3) };
    out.push(("softmax", grad_check(&mut sm, &uniform(&[3, 5], seed ^ 4), &GradCheckOptions::default()).unwrap()));

    let se_opts = AttentionOptions { se_reduction: Some(2), temperature: 0.8, ..AttentionOptions::default() };
    let mut spatial = AttentionPool::<f64>::spatial(6, 4, 3, se_opts, &mut r).unwrap();
    out.push(("attention spatial softmax", layer_check(&mut spatial, &[2, 6, 6], Mode::Train, seed)));
    let sig_opts = AttentionOptions { spatial_softmax: false, ..AttentionOptions::default() };
    let mut sigmoid = AttentionPool::<f64>::spatial(5, 4, 5, sig_opts, &mut r).unwrap();
    out.push(("attention spatial sigmoid", layer_check(&mut sigmoid, &[2, 6, 5], Mode::Train, seed)));
    let mut cond = AttentionPool::<f64>::conditioned(4, &mut r);
    out.push(("attention conditioned", layer_check(&mut cond, &[2, 6, 4], Mode::Train, seed)));
    let mut gate = SeGate::<f64>::new(6, 2, &mut r);
    out.push(("se gate", layer_check(&mut gate, &[2, 5, 6], Mode::Train, seed)));
    let mut mhsa = MultiHeadSelfAttention::<f64>::new(8, 2, &mut r);
    out.push(("self attention", layer_check(&mut mhsa, &[2, 5, 8], Mode::Train, seed)));
    let mut refiner = TokenRefiner::<f64>::new(RefinerConfig::new(2, 2, 8), &mut r).unwrap();
    out.push(("token refiner", layer_check(&mut refiner, &[2, 4, 8], Mode::Train, seed)));

    let mut global = LocalGram::<f64>::new(1);
    out.push(("gram global", layer_check(&mut global, &[2, 3, 4, 4], Mode::Train, seed)));
    let mut local = LocalGram::<f64>::new(2);
    out.push(("gram local", layer_check(&mut local, &[2, 3, 4, 6], Mode::Train, seed)));
    let mut proj = channel_projection::<f64, _>(4, 3, false, &mut r).unwrap();
    out.push(("channel projection", layer_check(&mut proj, &[2, 4, 3, 3], Mode::Train, seed)));
    let mut tok = StyleTokenizer::<f64>::new(3, 2, 6, &mut r);
    out.push(("style tokenizer", layer_check(&mut tok, &[2, 3, 4, 4], Mode::Train, seed)));

    let logits = uniform(&[6, 4], seed ^ 9).map(|v| 3.0 * v);
    let labels = vec![0, 3, IGNORE, 1, 2, 1];
    let weights = vec![0.5, 1.0, 2.0, 1.5];
    for (name, gamma) in [("weighted ce", 0.0), ("focal 0.5", 0.5), ("focal 2", 2.0)] {
        let mut probe = LossProbe { labels: labels.clone(), weights: weights.clone(), gamma };
        out.push((name, grad_check(&mut probe, &logits, &GradCheckOptions::default()).unwrap()));
    }
    out
}

fn end_to_end_report(cfg: &ModelConfig, seed: u64, coords: usize) -> GradCheckReport {
    let mut model = build_model::<f64>(cfg).unwrap();
    let size = cfg.input_size;
    let x = Tensor::uniform(&[2, 3, size, size], 0.0, 1.0, &mut rng(seed ^ 0x77));
    let mut lr = SplitMix64::new(seed);
    let labels = cfg.taxonomy.tasks.iter().map(|t| (0..2).map(|_| lr.below(t.num_classes() as u64 + 1) as i64 - 1).collect()).collect();
    let mut obj = EndToEnd { model: &mut model, labels };
    grad_check(&mut obj, &x, &GradCheckOptions::sampled(coords)).unwrap()
}

#[test]
fn gradient_correctness() {
    let _guard = serial();
    let start = Instant::now();
    const TOL: f64 = 1e-4;
    let seeds = 0..10u64;
    let mut worst: Vec<(&'static str, f64, String)> = Vec::new();
    for seed in seeds.clone() {
        for (name, rep) in layer_reports(seed) {
            match worst.iter_mut().find(|w| w.0 == name) {
                Some(w) if w.1 < rep.max_rel_err => *w = (name, rep.max_rel_err, rep.worst.clone()),
                Some(_) => {}
                None => worst.push((name, rep.max_rel_err, rep.worst.clone())),
            }
        }
    }
    let mut pass = true;
    for (name, err, at) in &worst {
        pass &= *err < TOL;
        println!("  {name:<28} max rel err {err:.2e}  ({at})");
    }

    let mut e2e = Vec::new();
    for seed in seeds.clone() {
        let mut cfg = ModelConfig::pmg_mini(Taxonomy::synthetic());
        cfg.seed = seed;
        cfg.use_channel_attention = true;
        cfg.attention.tv_lambda = 0.01;
        e2e.push(("pmg-mini", seed, end_to_end_report(&cfg, seed, 2).max_rel_err));
    }
    for family in [Family::Pm, Family::Rtm, Family::Rtmg] {
        let mut cfg = ModelConfig::mini(family, Taxonomy::synthetic());
        cfg.input_size = 32;
        cfg.seed = 100;
        let label = match family {
            Family::Pm => "pm-mini@32",
            Family::Rtm => "rtm-mini@32",
            _ => "rtmg-mini@32",
        };
        e2e.push((label, 100, end_to_end_report(&cfg, 100, 2).max_rel_err));
    }
    for (name, seed, err) in &e2e {
        pass &= *err < TOL;
        println!("  end-to-end {name:<16} seed {seed:<3} max rel err {err:.2e}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    let fast = elapsed < 120.0;
    let overall = worst.iter().map(|w| w.1).chain(e2e.iter().map(|e| e.2)).fold(0.0, f64::max);
    let ok = verdict(
        "1",
        pass && fast,
        format!("{} layer checks x 10 seeds + {} end-to-end checks, worst rel err {overall:.2e} (< {TOL:e}), {elapsed:.1}s (< 120s)", worst.len(), e2e.len()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 2. Gram algebra

/// Values `k/8`, `k ∈ [-8, 8]`: sums of their products are exact in f64, so
/// any reordering of the spatial sum yields the same bits.
fn dyadic(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = SplitMix64::new(seed);
    Tensor::from_fn(shape, |_| (r.below(17) as f64 - 8.0) / 8.0)
}

/// Moves patch `perm[p]` of the source into slot `p`.
fn permute_patches(x: &Tensor<f64>, d: usize, perm: &[usize]) -> Tensor<f64> {
    let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (ph, pw) = (h / d, w / d);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    for bi in 0..b {
        for ch in 0..c {
            for (dst, &src) in perm.iter().enumerate() {
                let (dr, dc, sr, sc) = (dst / d, dst % d, src / d, src % d);
                for y in 0..ph {
                    for xx in 0..pw {
                        let v = x.at(&[bi, ch, sr * ph + y, sc * pw + xx]);
                        let i = ((bi * c + ch) * h + dr * ph + y) * w + dc * pw + xx;
                        out.data_mut()[i] = v;
                    }
                }
            }
        }
    }
    out
}

fn permute_pixels(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (b, c) = (x.dim(0), x.dim(1));
    let s = x.dim(2) * x.dim(3);
    let mut out = Tensor::zeros(x.shape());
    for plane in 0..b * c {
        for (dst, &src) in perm.iter().enumerate() {
            out.data_mut()[plane * s + dst] = x.data()[plane * s + src];
        }
    }
    out
}

#[test]
fn gram_algebra() {
    let _guard = serial();
    let (mut asym, mut min_eig) = (0.0f64, f64::INFINITY);
    let (mut decomp, mut cases) = (0.0f64, 0usize);
    let (mut invariant, mut equivariant, mut d1_equal) = (true, true, true);
    let mut float_perm_dev = 0.0f64;
    for seed in 0..200u64 {
        let mut r = SplitMix64::new(seed);
        let c = 1 + r.below(6) as usize;
        let d = 1 + r.below(4) as usize;
        let (ph, pw) = (1 + r.below(4) as usize, 1 + r.below(4) as usize);
        let (h, w) = (d * ph, d * pw);
        let x = uniform(&[2, c, h, w], seed);
        let global = gram_global(&x).unwrap();
        let local = gram_local(&x, d).unwrap();
        for g in global.data().chunks(c * c) {
            let m = gram_matrix(g, h * w);
            asym = asym.max(m.asymmetry());
            min_eig = min_eig.min(m.min_eigenvalue());
        }
        for g in local.data().chunks(c * c) {
            let m = gram_matrix(g, ph * pw);
            asym = asym.max(m.asymmetry());
            min_eig = min_eig.min(m.min_eigenvalue());
        }

        // G_global = Σ (A/S)·G_i
        let np = d * d;
        let share = (ph * pw) as f64 / (h * w) as f64;
        for bi in 0..2 {
            for k in 0..c * c {
                let sum: f64 = (0..np).map(|p| share * local.data()[(bi * np + p) * c * c + k]).sum();
                decomp = decomp.max((sum - global.data()[bi * c * c + k]).abs());
            }
        }

        // d = 1 local is the global Gram, bit for bit.
        d1_equal &= gram_local(&x, 1).unwrap().data() == global.data();

        let mut pixel_perm: Vec<usize> = (0..h * w).collect();
        r.shuffle(&mut pixel_perm);
        let exact = dyadic(&[2, c, h, w], seed ^ 0xd1);
        invariant &= gram_global(&permute_pixels(&exact, &pixel_perm)).unwrap().data() == gram_global(&exact).unwrap().data();
        float_perm_dev = float_perm_dev.max(gram_global(&permute_pixels(&x, &pixel_perm)).unwrap().max_abs_diff(&global));

        let mut patch_perm: Vec<usize> = (0..np).collect();
        r.shuffle(&mut patch_perm);
        let moved = gram_local(&permute_patches(&x, d, &patch_perm), d).unwrap();
        for bi in 0..2 {
            for (dst, &src) in patch_perm.iter().enumerate() {
                let a = &moved.data()[(bi * np + dst) * c * c..][..c * c];
                let b = &local.data()[(bi * np + src) * c * c..][..c * c];
                equivariant &= a == b;
            }
        }
        cases += 1;
    }
    let mut ok = verdict("2 symmetry", asym < 1e-6, format!("max |G_ij - G_ji| = {asym:.1e} over {cases} random inputs (< 1e-6)"));
    ok &= verdict("2 psd", min_eig >= -1e-5, format!("min eigenvalue {min_eig:.2e} (>= -1e-5)"));
    ok &= verdict(
        "2 global permutation invariance",
        invariant,
        format!("bitwise equal on exactly summable inputs; float inputs differ by at most {float_perm_dev:.1e} from summation order"),
    );
    ok &= verdict("2 local patch equivariance", equivariant, "permuting patches permutes the per-patch Grams bit for bit");
    ok &= verdict("2 decomposition", decomp < 1e-6, format!("max |G_global - sum (A/S) G_i| = {decomp:.1e} (< 1e-6)"));
    ok &= verdict("2 d=1 local is global", d1_equal, "bitwise equal");
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 3. Receptive fields of the stride-4 stem

#[test]
fn receptive_fields_tile() {
    let _guard = serial();
    let stem = [ConvSpec::new(3, 8, 4, 4, 0)];
    let (mut sizes, mut exact_tilings, mut overlaps, mut gaps_in_cover) = (0usize, 0usize, 0usize, 0usize);
    let mut coverage = vec![0u8; 128 * 128];
    for h in 4..=128usize {
        for w in 4..=128usize {
            coverage[..h * w].iter_mut().for_each(|c| *c = 0);
            let (oh, ow) = (h / 4, w / 4);
            for r in 0..oh {
                for c in 0..ow {
                    let rect = receptive_field(&stem, (h, w), (r, c)).unwrap().rect;
                    for y in rect.top..rect.bottom() {
                        for x in rect.left..rect.right() {
                            coverage[y * w + x] += 1;
                        }
                    }
                }
            }
            // Pixels inside the covered region must be seen exactly once; the
            // stride remainder (fewer than 4 rows or columns) is never seen.
            let (ch, cw) = (oh * 4, ow * 4);
            let mut tiled = true;
            for y in 0..h {
                for x in 0..w {
                    let n = coverage[y * w + x];
                    let inside = y < ch && x < cw;
                    if n > 1 {
                        overlaps += 1;
                        tiled = false;
                    } else if inside && n == 0 {
                        gaps_in_cover += 1;
                        tiled = false;
                    } else if !inside && n != 0 {
                        tiled = false;
                    }
                }
            }
            if tiled && h % 4 == 0 && w % 4 == 0 {
                exact_tilings += 1;
            }
            sizes += 1;
        }
    }
    let divisible = (4..=128).filter(|n| n % 4 == 0).count().pow(2);

    // Pairwise disjointness spelled out on the largest input.
    let fields: Vec<Rect> = (0..32).flat_map(|r| (0..32).map(move |c| (r, c))).map(|p| receptive_field(&stem, (128, 128), p).unwrap().rect).collect();
    let pairwise = fields.iter().enumerate().all(|(i, a)| fields[i + 1..].iter().all(|b| !a.intersects(b)));
    let area: usize = fields.iter().map(Rect::area).sum();

    let ok = verdict(
        "3",
        overlaps == 0 && gaps_in_cover == 0 && exact_tilings == divisible && pairwise && area == 128 * 128,
        format!(
            "{sizes} input sizes 4..=128 x 4..=128: {overlaps} doubly covered pixels, {gaps_in_cover} uncovered pixels in the covered region, \
             {exact_tilings}/{divisible} stride-divisible sizes tiled exactly; 1024 fields at 128x128 pairwise disjoint = {pairwise}, total area {area}"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 4. Head modularity

#[test]
fn head_subsets_bit_identical() {
    let _guard = serial();
    let taxonomy = Taxonomy::weather_default();
    let (mut subsets, mut compared, mut mismatches) = (0usize, 0usize, 0usize);
    for (mi, family) in [Family::Pmg, Family::Pm, Family::Rtm, Family::Rtmg].into_iter().enumerate() {
        let mut cfg = ModelConfig::mini(family, taxonomy.clone());
        cfg.seed = 1000 + mi as u64;
        let mut model = build_model::<f32>(&cfg).unwrap();
        let x = Tensor::<f32>::uniform(&[2, 3, 64, 64], 0.0, 1.0, &mut rng(cfg.seed));
        let full = model.infer(&x).unwrap();
        let names: Vec<String> = model.heads.iter().map(|h| h.task.clone()).collect();
        let mut r = SplitMix64::new(cfg.seed);
        let mut masks: Vec<u64> = vec![1, (1 << names.len()) - 1, 0b1111];
        while masks.len() < 24 {
            let m = r.below(1 << names.len());
            if m != 0 {
                masks.push(m);
            }
        }
        for mask in masks {
            let on: Vec<&str> = names.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, n)| n.as_str()).collect();
            model.set_enabled_heads(&on).unwrap();
            let sub = model.infer(&x).unwrap();
            for (i, s) in sub.iter().enumerate() {
                let enabled = mask >> i & 1 == 1;
                if s.is_some() != enabled {
                    mismatches += 1;
                }
                if let Some(s) = s {
                    compared += 1;
                    let reference = full[i].as_ref().unwrap();
                    if s.data().iter().zip(reference.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
                        mismatches += 1;
                    }
                }
            }
            subsets += 1;
        }
    }
    let ok = verdict(
        "4",
        mismatches == 0 && subsets >= 20,
        format!(
            "{subsets} head subsets over 4 random models ({} heads each), {compared} enabled-head logit tensors compared, {mismatches} differ",
            taxonomy.num_tasks()
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 5. Loss and metric oracles

/// Weighted cross-entropy computed directly from the definition.
fn ce_oracle(logits: &[f64], k: usize, labels: &[i64], weights: &[f64]) -> (f64, Vec<f64>) {
    let m = labels.iter().filter(|&&y| y >= 0).count() as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y < 0 {
            continue;
        }
        let row = &logits[i * k..(i + 1) * k];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        let y = y as usize;
        loss += -weights[y] * (row[y].exp() / z).ln();
        for c in 0..k {
            let p = row[c].exp() / z;
            grad[i * k + c] = weights[y] * (p - if c == y { 1.0 } else { 0.0 }) / m;
        }
    }
    (loss / m, grad)
}

/// Weighted F1 straight from the label/prediction sequences.
fn f1_oracle(k: usize, preds: &[i64], labels: &[i64]) -> f64 {
    let n = labels.len() as f64;
    let mut total = 0.0;
    for c in 0..k as i64 {
        let tp = preds.iter().zip(labels).filter(|(&p, &y)| p == c && y == c).count() as f64;
        let fp = preds.iter().zip(labels).filter(|(&p, &y)| p == c && y != c).count() as f64;
        let fneg = preds.iter().zip(labels).filter(|(&p, &y)| p != c && y == c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        total += f1 * (tp + fneg);
    }
    if n == 0.0 {
        0.0
    } else {
        total / n
    }
}

#[test]
fn loss_and_metric_oracles() {
    let _guard = serial();
    // focal(γ = 0) against the cross-entropy oracle
    let mut ce_dev = 0.0f64;
    for seed in 0..50u64 {
        let mut r = SplitMix64::new(seed);
        let (b, k) = (1 + r.below(8) as usize, 2 + r.below(5) as usize);
        let logits = uniform(&[b, k], seed).map(|v| 4.0 * v);
        let mut labels: Vec<i64> = (0..b).map(|_| r.below(k as u64 + 1) as i64 - 1).collect();
        labels[0] = 0;
        let weights: Vec<f64> = (0..k).map(|_| 0.25 + 2.0 * r.unit()).collect();
        let focal = focal_loss(&logits, &labels, &weights, 0.0).unwrap();
        let (loss, grad) = ce_oracle(logits.data(), k, &labels, &weights);
        ce_dev = ce_dev.max((focal.value - loss).abs());
        ce_dev = ce_dev.max(focal.grad.data().iter().zip(&grad).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let mut ok = verdict("5 focal(0) = weighted CE", ce_dev < 1e-7, format!("max deviation from the CE oracle {ce_dev:.1e} over 50 batches (< 1e-7)"));

    // Interleaving ignored rows changes nothing.
    let mut ignore_same = true;
    for seed in 0..50u64 {
        let mut r = SplitMix64::new(seed ^ 0xfeed);
        let (b, k) = (1 + r.below(8) as usize, 2 + r.below(4) as usize);
        let logits = uniform(&[b, k], seed);
        let labels: Vec<i64> = (0..b).map(|_| r.below(k as u64) as i64).collect();
        let preds: Vec<i64> = (0..b).map(|_| r.below(k as u64) as i64).collect();
        let weights: Vec<f64> = (0..k).map(|_| 0.5 + r.unit()).collect();
        let gamma = [0.0, 1.0, 2.0][seed as usize % 3];
        let base = focal_loss(&logits, &labels, &weights, gamma).unwrap();
        let base_metrics = task_metrics("t", k, &preds, &labels);

        let extra = 1 + r.below(5) as usize;
        // Ignored rows go in at random places; labelled rows keep their order.
        let mut slots: Vec<Option<usize>> = (0..b).map(Some).collect();
        for _ in 0..extra {
            let at = r.below(slots.len() as u64 + 1) as usize;
            slots.insert(at, None);
        }
        let noise = uniform(&[extra, k], seed ^ 0xabc).map(|v| 50.0 * v);
        let (mut rows, mut lab, mut pr, mut e) = (Vec::new(), Vec::new(), Vec::new(), 0);
        for s in &slots {
            match s {
                Some(i) => {
                    rows.extend_from_slice(&logits.data()[i * k..(i + 1) * k]);
                    lab.push(labels[*i]);
                    pr.push(preds[*i]);
                }
                None => {
                    rows.extend_from_slice(&noise.data()[e * k..(e + 1) * k]);
                    lab.push(IGNORE);
                    pr.push(r.below(k as u64) as i64);
                    e += 1;
                }
            }
        }
        let mixed = focal_loss(&Tensor::new(&[slots.len(), k], rows).unwrap(), &lab, &weights, gamma).unwrap();
        ignore_same &= mixed.value.to_bits() == base.value.to_bits();
        for (j, s) in slots.iter().enumerate() {
            let got = &mixed.grad.data()[j * k..(j + 1) * k];
            ignore_same &= match s {
                Some(i) => got.iter().zip(&base.grad.data()[i * k..(i + 1) * k]).all(|(a, b)| a.to_bits() == b.to_bits()),
                None => got.iter().all(|v| *v == 0.0),
            };
        }
        ignore_same &= task_metrics("t", k, &pr, &lab) == base_metrics;
    }
    ok &= verdict("5 ignore label", ignore_same, "50 batches with interleaved -1 rows: loss, gradients and metrics bitwise unchanged");

    // Every label/prediction sequence with K <= 4 and n <= 6.
    let start = Instant::now();
    let (mut combos, mut f1_dev) = (0u64, 0.0f64);
    for k in 1..=4usize {
        for n in 1..=6usize {
            let total = (k as u64).pow(2 * n as u32);
            let mut preds = vec![0i64; n];
            let mut labels = vec![0i64; n];
            for code in 0..total {
                let mut c = code;
                for i in 0..n {
                    labels[i] = (c % k as u64) as i64;
                    c /= k as u64;
                    preds[i] = (c % k as u64) as i64;
                    c /= k as u64;
                }
                let got = task_metrics("t", k, &preds, &labels).weighted_f1;
                f1_dev = f1_dev.max((got - f1_oracle(k, &preds, &labels)).abs());
                combos += 1;
            }
        }
    }
    ok &= verdict(
        "5 weighted F1",
        f1_dev < 1e-12,
        format!("{combos} sequences (K <= 4, n <= 6), max deviation from the direct oracle {f1_dev:.1e}, {:.1}s", start.elapsed().as_secs_f64()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 6. and 7. Learning on the synthetic style dataset

struct ToyData {
    train: Dataset,
    test: Dataset,
}

impl ToyData {
    fn new() -> Self {
        let gen = |count, seed| {
            let d = synth_style_dataset(&SynthConfig { size: 64, count, imbalance: 1.0, sources: 10 }, seed).unwrap();
            Dataset::from_synth(&d)
        };
        Self { train: gen(600, 2024), test: gen(200, 4048) }
    }

    fn train_ids(&self) -> Vec<usize> {
        (0..self.train.len()).collect()
    }

    fn test_ids(&self) -> Vec<usize> {
        (0..self.test.len()).collect()
    }

    /// Mean weighted F1 of predicting each task's most frequent train class.
    fn majority_baseline(&self) -> f64 {
        let tasks = self.train.taxonomy.num_tasks();
        let test_ids = self.test_ids();
        let f1s: Vec<f64> = (0..tasks)
            .map(|t| {
                let k = self.train.taxonomy.tasks[t].num_classes();
                let mut counts = vec![0usize; k];
                for y in self.train.task_labels(t, &self.train_ids()) {
                    if y >= 0 {
                        counts[y as usize] += 1;
                    }
                }
                let majority = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap() as i64;
                let labels = self.test.task_labels(t, &test_ids);
                task_metrics("t", k, &vec![majority; labels.len()], &labels).weighted_f1
            })
            .collect();
        f1s.iter().sum::<f64>() / f1s.len() as f64
    }
}

/// Trains epoch by epoch, scoring the test split after each; returns the
/// epoch (1-based) that first reached `target` and the scores.
fn learn(cfg: &ModelConfig, tc: &TrainConfig, data: &ToyData, target: f64) -> (Option<usize>, Vec<f64>) {
    let mut trainer = Trainer::new(cfg, tc, &data.train, &data.train_ids()).unwrap();
    let mut scores = Vec::new();
    for epoch in 1..=tc.epochs {
        trainer.run_epoch(&data.train, &data.train_ids()).unwrap();
        let f1 = evaluate(&trainer.model, &data.test, &data.test_ids()).unwrap().mean_f1().unwrap();
        scores.push(f1);
        if f1 >= target {
            return (Some(epoch), scores);
        }
    }
    (None, scores)
}

#[test]
fn toy_learning() {
    let _guard = serial();
    let start = Instant::now();
    let data = ToyData::new();
    let baseline = data.majority_baseline();
    let taxonomy = data.train.taxonomy.clone();
    let runs = [
        ("PMG-mini", ModelConfig::pmg_mini(taxonomy.clone()), TrainConfig { epochs: 30, lr: 3e-3, batch_size: 16, ..TrainConfig::default() }),
        ("RTM-mini", ModelConfig::rtm_mini(taxonomy.clone()), TrainConfig { epochs: 30, batch_size: 16, ..TrainConfig::sgd(0.03) }),
    ];
    let mut ok = true;
    for (name, cfg, tc) in runs {
        let t0 = Instant::now();
        let (reached, scores) = learn(&cfg, &tc, &data, 0.90);
        let best = scores.iter().copied().fold(0.0, f64::max);
        let last = *scores.last().unwrap();
        let pass = reached.is_some() && last - baseline >= 0.3;
        ok &= verdict(
            &format!("6 {name}"),
            pass,
            format!(
                "test mean F1 {last:.4} at epoch {} (best {best:.4}, target 0.90 within 30 epochs: {}), majority baseline {baseline:.4}, margin {:.4} (>= 0.3), {:.1}s",
                scores.len(),
                reached.map_or("not reached".to_string(), |e| format!("reached at epoch {e}")),
                last - baseline,
                t0.elapsed().as_secs_f64()
            ),
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    ok &= verdict("6 runtime", elapsed < 600.0, format!("{elapsed:.1}s (< 600s)"));
    assert!(ok);
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Median difference and Cohen's d of `a` over `b`.
fn effect(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let pooled = (0.5 * (var(a) + var(b))).sqrt();
    (median(a) - median(b), if pooled > 0.0 { (mean(a) - mean(b)) / pooled } else { 0.0 })
}

#[test]
fn attention_ablation_direction() {
    let _guard = serial();
    let data = ToyData::new();
    let taxonomy = data.train.taxonomy.clone();
    // The decision uses the full toy-learning budget; earlier points of the
    // same runs are reported as a learning-curve view.
    const BUDGET: usize = 30;
    let checkpoints = [4usize, 12, BUDGET];
    let mut with = vec![Vec::new(); checkpoints.len()];
    let mut without = vec![Vec::new(); checkpoints.len()];
    for seed in 0..5u64 {
        for use_attention in [true, false] {
            let cfg = ModelConfig { use_attention, seed, ..ModelConfig::pm_mini(taxonomy.clone()) };
            let tc = TrainConfig { epochs: BUDGET, lr: 3e-3, batch_size: 16, seed, ..TrainConfig::default() };
            let mut trainer = Trainer::new(&cfg, &tc, &data.train, &data.train_ids()).unwrap();
            for epoch in 1..=BUDGET {
                trainer.run_epoch(&data.train, &data.train_ids()).unwrap();
                if let Some(i) = checkpoints.iter().position(|&c| c == epoch) {
                    let f1 = evaluate(&trainer.model, &data.test, &data.test_ids()).unwrap().mean_f1().unwrap();
                    if use_attention { &mut with[i] } else { &mut without[i] }.push(f1);
                }
            }
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    for (i, &epoch) in checkpoints.iter().enumerate() {
        let (diff, d) = effect(&with[i], &without[i]);
        let line = format!(
            "PM median test mean-F1 after {epoch}/{BUDGET} epochs: with attention {:.4} vs without {:.4} (median diff {diff:+.4}, Cohen's d {d:+.2}); with [{}] without [{}]",
            median(&with[i]),
            median(&without[i]),
            fmt(&with[i]),
            fmt(&without[i])
        );
        if epoch == BUDGET {
            let ok = verdict("7", diff >= 0.0, format!("{line}; 5 seeds, matched budget"));
            assert!(ok);
        } else {
            println!("  {line}");
        }
    }
}

// ---------------------------------------------------------------------------
// 8. Split generator

fn video_records(seed: u64) -> Vec<SampleRecord> {
    let mut r = SplitMix64::new(seed);
    let mut recs = Vec::new();
    for v in 0..6 {
        let mut frame = r.below(5);
        for _ in 0..20 + r.below(60) {
            recs.push(SampleRecord { path: format!("v{v}/f{frame:05}.ppm"), source: format!("video{v}"), frame, labels: vec![0] });
            frame += 1 + r.below(3);
        }
    }
    recs
}

fn gap_oracle(records: &[SampleRecord], ids: &[usize]) -> Option<f64> {
    let mut by: std::collections::BTreeMap<&str, Vec<u64>> = Default::default();
    for &i in ids {
        by.entry(&records[i].source).or_default().push(records[i].frame);
    }
    let (mut n, mut sum) = (0u64, 0u64);
    for f in by.values_mut() {
        f.sort_unstable();
        for w in f.windows(2) {
            n += 1;
            sum += w[1] - w[0];
        }
    }
    (n > 0).then(|| sum as f64 / n as f64)
}

#[test]
fn split_generator() {
    let _guard = serial();
    let (mut runs, mut pairs, mut violations) = (0usize, 0u64, 0usize);
    let (mut overlap, mut quota_breaks, mut unstable, mut report_errors) = (0usize, 0usize, 0usize, 0usize);
    for seed in 0..12u64 {
        let records = video_records(seed);
        for min_gap in [1u64, 2, 5, 10] {
            for (train_quota, test_quota) in [(None, None), (Some(15), Some(4)), (Some(5), None)] {
                let spec = SplitSpec { test_fraction: 0.2, min_gap, train_quota, test_quota, seed };
                let split = generate_splits(&records, &spec).unwrap();
                let again = generate_splits(&records, &spec).unwrap();
                if id_list(&records, &split.train) != id_list(&records, &again.train)
                    || id_list(&records, &split.test) != id_list(&records, &again.test)
                    || split.report.to_text() != again.report.to_text()
                {
                    unstable += 1;
                }
                let train: BTreeSet<usize> = split.train.iter().copied().collect();
                overlap += split.test.iter().filter(|i| train.contains(i)).count();
                for side in [&split.train, &split.test] {
                    for (a, &i) in side.iter().enumerate() {
                        for &j in &side[a + 1..] {
                            if records[i].source == records[j].source {
                                pairs += 1;
                                if records[i].frame.abs_diff(records[j].frame) < min_gap {
                                    violations += 1;
                                }
                            }
                        }
                    }
                }
                for p in &split.report.per_source {
                    let count = |ids: &[usize]| ids.iter().filter(|&&i| records[i].source == p.source).count();
                    let (tr, te) = (count(&split.train), count(&split.test));
                    if train_quota.is_some_and(|q| tr > q) || test_quota.is_some_and(|q| te > q) || tr != p.train || te != p.test {
                        quota_breaks += 1;
                    }
                }
                let text = split.report.to_text();
                let fields_ok = split.report.train.mean_gap == gap_oracle(&records, &split.train)
                    && split.report.test.mean_gap == gap_oracle(&records, &split.test)
                    && split.report.full.mean_gap == gap_oracle(&records, &(0..records.len()).collect::<Vec<_>>())
                    && text.matches("mean_gap").count() == 3;
                if !fields_ok {
                    report_errors += 1;
                }
                runs += 1;
            }
        }
    }
    let ok = verdict(
        "8",
        violations == 0 && overlap == 0 && quota_breaks == 0 && unstable == 0 && report_errors == 0,
        format!(
            "{runs} splits: {pairs} same-source pairs checked, {violations} gap violations, {overlap} train/test overlaps, \
             {quota_breaks} quota breaches, {unstable} non-reproducible outputs, {report_errors} reports with wrong mean-gap fields"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 9. Evolutionary search on the stub landscape

fn stub_evaluator(family: Family, seed: u64) -> Evaluator<'static> {
    let space = SearchSpace::for_family(family);
    let optimum = space.random(&mut SplitMix64::new(seed ^ 0x0b7));
    Evaluator::new(space, FitnessMode::Stub { optimum }, seed).unwrap()
}

#[test]
fn evolutionary_search() {
    let _guard = serial();
    let start = Instant::now();
    let mut ok = true;
    for family in [Family::Rtm, Family::Rtmg, Family::Pm, Family::Pmg] {
        let (mut hits, mut monotone) = (0, true);
        for seed in 0..10u64 {
            let cfg = EvoConfig { population: 12, generations: 30, seed, ..EvoConfig::default() };
            let state = evolve(&cfg, &mut stub_evaluator(family, seed), None).unwrap();
            monotone &= state.log.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness);
            if state.best().fitness == 0.0 {
                hits += 1;
            }
        }
        let genes = SearchSpace::for_family(family).len();
        ok &= verdict(
            &format!("9 {family:?} optimum"),
            hits >= 9 && monotone,
            format!("optimum recovered in {hits}/10 seeds (>= 9), {genes} genes, elitist best non-decreasing in every run = {monotone}"),
        );
    }

    // Resume from a mid-run checkpoint file.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("evolution_state.json");
    let cfg = EvoConfig { population: 12, generations: 30, seed: 5, ..EvoConfig::default() };
    let full = evolve(&cfg, &mut stub_evaluator(Family::Pmg, 5), None).unwrap();
    let mut ev = stub_evaluator(Family::Pmg, 5);
    let mut part = EvoState::init(&cfg, &mut ev).unwrap();
    for _ in 0..11 {
        part.step(&mut ev).unwrap();
    }
    part.save(&path).unwrap();
    let mut resumed = EvoState::load(&path).unwrap();
    resumed.run(&mut stub_evaluator(Family::Pmg, 5), Some(&path)).unwrap();
    let replay = resumed == full && resumed.log_text() == full.log_text() && EvoState::load(&path).unwrap() == full;
    ok &= verdict("9 resume", replay, "run interrupted after generation 11 and resumed from disk equals the uninterrupted run (state and log)");
    let elapsed = start.elapsed().as_secs_f64();
    ok &= verdict("9 runtime", elapsed < 60.0, format!("{elapsed:.1}s for 41 stub runs (< 60s)"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 10. Throughput with heads disabled

#[test]
fn bench_monotone_and_read_only() {
    let _guard = serial();
    let mut cfg = ModelConfig::pm_mini(Taxonomy::weather_default());
    cfg.num_layers = 2;
    cfg.hidden_dims = 64;
    let mut model = build_model::<f32>(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.wsck");
    save_checkpoint(&path, &Checkpoint::from_model(&model, None, &[], &[])).unwrap();
    let before = std::fs::read(&path).unwrap();

    let bench = BenchConfig {
        source: FrameSource::Synthetic { frames: 16, seed: 3 },
        frame_size: 64,
        duration: 2.0,
        warmup: 0.4,
        heads: None,
        repetitions: 5,
        pipeline: Pipeline::Serial,
    };
    let frames = load_frames(&bench).unwrap();
    let names: Vec<String> = model.heads.iter().map(|h| h.task.clone()).collect();
    // The 12 weather heads, then 8, 4 (8 of 12 disabled) and 1 of them.
    let subsets: Vec<Option<Vec<String>>> = [12, 8, 4, 1].iter().map(|&n| Some(names[..n].to_vec())).collect();
    let reports = bench_subsets(&mut model, &bench, &frames, &subsets).unwrap();
    let checks = check_monotonicity(&reports).unwrap();
    let mut ok = true;
    for (c, r) in checks.iter().zip(&reports[1..]) {
        let pass = c.mean_fewer >= c.mean_more;
        let sd = r.std_fps().unwrap_or(0.0);
        ok &= verdict(
            &format!("10 {}->{} heads", c.more_heads, c.fewer_heads),
            pass,
            format!("mean fps {:.1} -> {:.1} (sd {sd:.1}, {} reps), one-sided Welch p {:.3}", c.mean_more, c.mean_fewer, r.fps.len(), c.p_value),
        );
    }

    save_checkpoint(&path, &Checkpoint::from_model(&model, None, &[], &[])).unwrap();
    let after = std::fs::read(&path).unwrap();
    let unchanged = before == after && model.enabled_tasks().len() == names.len();
    ok &= verdict("10 read-only", unchanged, format!("checkpoint re-saved after benchmarking is byte-identical ({} bytes), all heads re-enabled", after.len()));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 11. Serialization and the default taxonomy

fn probe_logits(model: &Model<f32>, seed: u64) -> Vec<Vec<u32>> {
    let size = model.config.input_size;
    let x = Tensor::<f32>::uniform(&[3, 3, size, size], 0.0, 1.0, &mut rng(seed));
    model.infer(&x).unwrap().into_iter().flatten().map(|t| t.data().iter().map(|v| v.to_bits()).collect()).collect()
}

#[test]
fn serialization() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let data = {
        let d = synth_style_dataset(&SynthConfig { size: 64, count: 48, imbalance: 0.6, sources: 4 }, 9).unwrap();
        Dataset::from_synth(&d)
    };
    let ids: Vec<usize> = (0..data.len()).collect();
    let mut ok = true;
    for family in [Family::Pm, Family::Pmg, Family::Rtm, Family::Rtmg] {
        let cfg = ModelConfig { seed: 7, ..ModelConfig::mini(family, data.taxonomy.clone()) };
        let tc = TrainConfig { epochs: 1, batch_size: 16, ..TrainConfig::default() };
        let mut trainer = Trainer::new(&cfg, &tc, &data, &ids).unwrap();
        trainer.run_epoch(&data, &ids).unwrap();
        trainer.history.push(EpochRecord { epoch: 1, lr: 1e-3, train_loss: 0.5, val_mean_f1: Some(0.25) });
        let ck = Checkpoint::from_model(&trainer.model, Some(&tc), &trainer.class_weights, &trainer.history);
        let path = dir.path().join(format!("{family:?}.wsck"));
        save_checkpoint(&path, &ck).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let resaved = dir.path().join(format!("{family:?}-again.wsck"));
        save_checkpoint(&resaved, &loaded).unwrap();
        let byte_equal = bytes == std::fs::read(&resaved).unwrap() && loaded.to_bytes() == bytes;
        let restored = loaded.to_model().unwrap();
        let logits_equal = probe_logits(&trainer.model, 31) == probe_logits(&restored, 31);
        ok &= verdict(
            &format!("11 {family:?} round trip"),
            byte_equal && logits_equal,
            format!("{} bytes: save-load-save byte-identical = {byte_equal}, probe logits bit-identical = {logits_equal}", bytes.len()),
        );
    }

    let default = Taxonomy::weather_default();
    let reparsed = Taxonomy::parse(&default.to_text()).unwrap();
    ok &= verdict("11 taxonomy parse", reparsed == default, "bundled default survives text serialization unchanged");
    assert!(ok);

    // Reported without asserting: see `stated_taxonomy_totals` below.
    let (tasks, classes, weather) = (reparsed.num_tasks(), reparsed.num_classes(), reparsed.weather_classes());
    verdict(
        "11 taxonomy totals",
        (tasks, classes, weather) == (13, 56, 53),
        format!(
            "{tasks} tasks / {classes} classes / {weather} weather classes vs stated 13 / 56 / 53; the enumerated class lists \
             (8+4+4+6+4+4+7+2+5+2+3+3 weather, +3 viewpoint) sum to 55 / 52, so the stated totals cannot both hold"
        ),
    );
}

/// The stated totals contradict the enumerated class lists; run with
/// `--ignored` to see the failure.
#[test]
#[ignore = "stated class totals (56 / 53) disagree with the enumerated lists (55 / 52)"]
fn stated_taxonomy_totals() {
    let t = Taxonomy::weather_default();
    assert_eq!((t.num_tasks(), t.num_classes(), t.weather_classes()), (13, 56, 53));
}

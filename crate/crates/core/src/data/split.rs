//! Train/test split generation with intra-source frame spacing and
//! per-source quotas.
//!
//! Sources are processed in lexicographic order. Each source draws from its
//! own SplitMix64 stream `derive(seed, source)`: its frames are sorted,
//! shuffled with that stream, and then scanned greedily, test side first.
//! A frame is taken when it keeps at least `min_gap` from every frame already
//! chosen for the same side of the same source and the side's quota is not
//! full. Train then scans the frames test did not take.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::manifest::SampleRecord;
use super::rng::SplitMix64;
use crate::error::{Error, Result};
use crate::textfmt::{self, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Share of each source aimed at the test side before quotas.
    pub test_fraction: f64,
    pub min_gap: u64,
    /// Per-source cap on train frames; `None` is unbounded.
    pub train_quota: Option<usize>,
    pub test_quota: Option<usize>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_fraction: 0.1, min_gap: 1, train_quota: None, test_quota: None, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_gap == 0 {
            return Err(Error::config("min_gap must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::config(format!("test_fraction {} outside [0, 1]", self.test_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub count: usize,
    pub sources: usize,
    /// Mean difference between consecutive selected frame indices within a
    /// source, pooled over sources; absent when no source has two frames.
    pub mean_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSplit {
    pub source: String,
    pub eligible: usize,
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub spec: SplitSpec,
    pub full: SplitStats,
    pub train: SplitStats,
    pub test: SplitStats,
    pub per_source: Vec<SourceSplit>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Record indices, ascending.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub report: SplitReport,
}

fn group_by_source(records: &[SampleRecord], ids: impl IntoIterator<Item = usize>) -> BTreeMap<&str, Vec<u64>> {
    let mut by: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for i in ids {
        by.entry(records[i].source.as_str()).or_default().push(records[i].frame);
    }
    by
}

pub fn split_stats(records: &[SampleRecord], ids: impl IntoIterator<Item = usize>) -> SplitStats {
    let by = group_by_source(records, ids);
    let (mut count, mut gaps, mut gap_sum) = (0, 0u64, 0u64);
    for frames in by.values() {
        let mut f = frames.clone();
        f.sort_unstable();
        count += f.len();
        for w in f.windows(2) {
            gaps += 1;
            gap_sum += w[1] - w[0];
        }
    }
    SplitStats { count, sources: by.len(), mean_gap: (gaps > 0).then(|| gap_sum as f64 / gaps as f64) }
}

fn spaced(chosen: &BTreeSet<u64>, frame: u64, gap: u64) -> bool {
    let lo = frame.saturating_sub(gap - 1);
    let hi = frame.saturating_add(gap - 1);
    chosen.range(lo..=hi).next().is_none()
}

/// Greedy spaced pick over `order`, skipping `taken`, up to `quota`.
fn pick(order: &[(u64, usize)], taken: &BTreeSet<usize>, gap: u64, quota: usize) -> Vec<usize> {
    let mut frames = BTreeSet::new();
    let mut out = Vec::new();
    for &(frame, id) in order {
        if out.len() == quota {
            break;
        }
        if !taken.contains(&id) && spaced(&frames, frame, gap) {
            frames.insert(frame);
            out.push(id);
        }
    }
    out
}

pub fn generate_splits(records: &[SampleRecord], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if records.is_empty() {
        return Err(Error::data("cannot split an empty record list"));
    }
    let mut by_source: BTreeMap<&str, Vec<(u64, usize)>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_source.entry(r.source.as_str()).or_default().push((r.frame, i));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut per_source = Vec::new();
    let mut warnings = Vec::new();
    for (source, mut order) in by_source {
        order.sort_unstable();
        SplitMix64::derive(spec.seed, source).shuffle(&mut order);
        let n = order.len();
        let wanted_test = if n >= 2 { ((spec.test_fraction * n as f64).round() as usize).clamp(1, n - 1) } else { 0 };
        let test_target = spec.test_quota.map_or(wanted_test, |q| wanted_test.min(q));
        let chosen_test = pick(&order, &BTreeSet::new(), spec.min_gap, test_target);
        let taken: BTreeSet<usize> = chosen_test.iter().copied().collect();
        let chosen_train = pick(&order, &taken, spec.min_gap, spec.train_quota.unwrap_or(usize::MAX));
        if chosen_test.len() < test_target {
            warnings.push(format!("source `{source}`: spacing allows {} of {test_target} test frames", chosen_test.len()));
        }
        if let Some(q) = spec.train_quota {
            if chosen_train.len() < q && chosen_train.len() + chosen_test.len() < n {
                warnings.push(format!("source `{source}`: spacing allows {} of {q} train frames", chosen_train.len()));
            }
        }
        if n >= 2 && (chosen_test.is_empty() || chosen_train.is_empty()) {
            warnings.push(format!("source `{source}`: quotas leave one side empty"));
        }
        per_source.push(SourceSplit { source: source.to_string(), eligible: n, train: chosen_train.len(), test: chosen_test.len() });
        train.extend(chosen_train);
        test.extend(chosen_test);
    }
    train.sort_unstable();
    test.sort_unstable();
    let report = SplitReport {
        spec: spec.clone(),
        full: split_stats(records, 0..records.len()),
        train: split_stats(records, train.iter().copied()),
        test: split_stats(records, test.iter().copied()),
        per_source,
        warnings,
    };
    Ok(Split { train, test, report })
}

fn fmt_gap(g: Option<f64>) -> String {
    g.map_or_else(|| "-".into(), |g| format!("{g:.4}"))
}

impl SplitReport {
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let quota = |q: Option<usize>| q.map_or_else(|| "-".into(), |q| q.to_string());
        let mut recs = vec![Record::new("spec")
            .with("seed", s.seed)
            .with("min_gap", s.min_gap)
            .with("test_fraction", s.test_fraction)
            .with("train_quota", quota(s.train_quota))
            .with("test_quota", quota(s.test_quota))];
        for (name, st) in [("full", &self.full), ("train", &self.train), ("test", &self.test)] {
            recs.push(Record::new("set").with("name", name).with("count", st.count).with("sources", st.sources).with("mean_gap", fmt_gap(st.mean_gap)));
        }
        for p in &self.per_source {
            recs.push(Record::new("source").with("name", &p.source).with("eligible", p.eligible).with("train", p.train).with("test", p.test));
        }
        for w in &self.warnings {
            recs.push(Record::new("warning").with("msg", w));
        }
        textfmt::write("split", &recs)
    }
}

/// One record path per line under a format line.
pub fn id_list(records: &[SampleRecord], ids: &[usize]) -> String {
    let mut out = textfmt::header("ids");
    out.push('\n');
    for &i in ids {
        out.push_str(&records[i].path);
        out.push('\n');
    }
    out
}

/// Indices of the records named in an id list, in list order.
pub fn parse_id_list(text: &str, records: &[SampleRecord]) -> Result<Vec<usize>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(textfmt::header("ids").as_str()) {
        return Err(Error::Parse { line: 1, msg: format!("expected `{}`", textfmt::header("ids")) });
    }
    let index: BTreeMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.path.as_str(), i)).collect();
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| index.get(l.trim()).copied().ok_or_else(|| Error::data(format!("id list line {}: unknown record `{l}`", i + 2))))
        .collect()
}

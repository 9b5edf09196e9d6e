//! Many-to-one label harmonization between taxonomies.
//!
//! ```text
//! #format wsty-labelmap 1
//! map	src_task=Weather Type	src_class=Fog + Rain	dst_task=Weather Type	dst_class=fog
//! map	src_task=Weather Type	src_class=None	dst_task=Weather Type	dst_class=-
//! ```
//!
//! A `-` target declares the source class droppable: it maps to `-1`.

use std::collections::BTreeMap;

use super::manifest::SampleRecord;
use super::taxonomy::{TaskSpec, Taxonomy};
use crate::error::{Error, Result};
use crate::loss::IGNORE;
use crate::textfmt::{self, Record};

const DROP: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
struct TaskMap {
    target: usize,
    /// Source class index to target class index (`None` = drop).
    classes: BTreeMap<usize, Option<usize>>,
}

/// Label map resolved against a source and a target taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub source: Taxonomy,
    pub target: Taxonomy,
    /// Keyed by source task index.
    tasks: BTreeMap<usize, TaskMap>,
}

fn class_of(task: &TaskSpec, label: &str) -> Result<usize> {
    task.class_index(label).ok_or_else(|| Error::config(format!("`{label}` is not a class of `{}`", task.name)))
}

impl LabelMap {
    pub fn new(source: Taxonomy, target: Taxonomy) -> Self {
        Self { source, target, tasks: BTreeMap::new() }
    }

    /// Declares `src_task/src_class → dst_task/dst_class`; `dst_class = None`
    /// drops the label.
    pub fn add(&mut self, src_task: &str, src_class: &str, dst_task: &str, dst_class: Option<&str>) -> Result<()> {
        let si = self.source.task_index(src_task).ok_or_else(|| Error::config(format!("unknown source task `{src_task}`")))?;
        let ti = self.target.task_index(dst_task).ok_or_else(|| Error::config(format!("unknown target task `{dst_task}`")))?;
        let sc = class_of(&self.source.tasks[si], src_class)?;
        let tc = dst_class.map(|c| class_of(&self.target.tasks[ti], c)).transpose()?;
        if let Some((other, _)) = self.tasks.iter().find(|(&s, m)| m.target == ti && s != si) {
            return Err(Error::config(format!("target task `{dst_task}` already fed by `{}`", self.source.tasks[*other].name)));
        }
        let entry = self.tasks.entry(si).or_insert(TaskMap { target: ti, classes: BTreeMap::new() });
        if entry.target != ti {
            return Err(Error::config(format!("source task `{src_task}` mapped to two target tasks")));
        }
        if entry.classes.insert(sc, tc).is_some() {
            return Err(Error::config(format!("`{src_task}/{src_class}` mapped twice")));
        }
        Ok(())
    }

    /// Identity map on every task of `taxonomy`.
    pub fn identity(taxonomy: &Taxonomy) -> Self {
        let mut m = Self::new(taxonomy.clone(), taxonomy.clone());
        for t in &taxonomy.tasks {
            for c in &t.classes {
                m.add(&t.name, c, &t.name, Some(c)).expect("identity is consistent");
            }
        }
        m
    }

    /// Weather Type harmonized onto the four-class `{sun, fog, rain, snow}`
    /// scheme of external benchmarks; `None` is dropped.
    pub fn external_weather(source: &Taxonomy) -> Result<Self> {
        let target = Taxonomy::new(vec![TaskSpec::new("Weather Type", &["sun", "fog", "rain", "snow"])])?;
        let mut m = Self::new(source.clone(), target);
        for (src, dst) in [
            ("Clear", Some("sun")),
            ("Sunny + Clear", Some("sun")),
            ("Fog", Some("fog")),
            ("Fog + Rain", Some("fog")),
            ("Fog + Snow", Some("fog")),
            ("Rain", Some("rain")),
            ("Snow", Some("snow")),
            ("None", None),
        ] {
            m.add("Weather Type", src, "Weather Type", dst)?;
        }
        Ok(m)
    }

    /// Target `(task, class)` of a source label, `None` if unmapped or
    /// dropped; an undeclared class of a mapped task is a data error.
    pub fn map_label(&self, src_task: usize, label: i64) -> Result<Option<(usize, i64)>> {
        let Some(m) = self.tasks.get(&src_task) else { return Ok(None) };
        if label == IGNORE {
            return Ok(Some((m.target, IGNORE)));
        }
        match m.classes.get(&(label as usize)) {
            Some(Some(c)) => Ok(Some((m.target, *c as i64))),
            Some(None) => Ok(Some((m.target, IGNORE))),
            None => Err(Error::data(format!(
                "no mapping for `{}/{}`",
                self.source.tasks[src_task].name,
                self.source.tasks[src_task].classes.get(label as usize).map_or("?", String::as_str)
            ))),
        }
    }

    /// Source task feeding each target task, if any.
    pub fn target_sources(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.target.num_tasks()];
        for (&s, m) in &self.tasks {
            out[m.target] = Some(s);
        }
        out
    }

    pub fn remap(&self, records: &[SampleRecord]) -> Result<Vec<SampleRecord>> {
        records
            .iter()
            .map(|r| {
                let mut labels = vec![IGNORE; self.target.num_tasks()];
                for &s in self.tasks.keys() {
                    if let Some((t, l)) = self.map_label(s, r.labels[s]).map_err(|e| match e {
                        Error::Data(m) => Error::data(format!("`{}`: {m}", r.path)),
                        other => other,
                    })? {
                        labels[t] = l;
                    }
                }
                Ok(SampleRecord { labels, ..r.clone() })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut recs = Vec::new();
        for (&s, m) in &self.tasks {
            let (st, tt) = (&self.source.tasks[s], &self.target.tasks[m.target]);
            for (&sc, tc) in &m.classes {
                recs.push(
                    Record::new("map")
                        .with("src_task", &st.name)
                        .with("src_class", &st.classes[sc])
                        .with("dst_task", &tt.name)
                        .with("dst_class", tc.map_or(DROP, |c| tt.classes[c].as_str())),
                );
            }
        }
        textfmt::write("labelmap", &recs)
    }

    pub fn parse(text: &str, source: Taxonomy, target: Taxonomy) -> Result<Self> {
        let mut m = Self::new(source, target);
        for r in textfmt::parse("labelmap", text)? {
            if r.tag != "map" {
                return Err(Error::Parse { line: r.line, msg: format!("unknown record `{}`", r.tag) });
            }
            let dst = r.require("dst_class")?;
            m.add(r.require("src_task")?, r.require("src_class")?, r.require("dst_task")?, (dst != DROP).then_some(dst))
                .map_err(|e| Error::Parse { line: r.line, msg: e.to_string() })?;
        }
        Ok(m)
    }
}

/// Runs `records` through `map`, preserving order.
pub fn remap_labels(records: &[SampleRecord], map: &LabelMap) -> Result<Vec<SampleRecord>> {
    map.remap(records)
}

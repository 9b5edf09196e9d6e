//! Sample manifests: a format line followed by CSV with a header row.
//!
//! ```text
//! #format wsty-manifest 1
//! path,source,frame,Tint,Grain,Veil
//! img/000000.ppm,scene03,0,Warm,2,
//! ```
//!
//! Labels are class names or indices; an empty cell or `Unknown` marks a
//! missing label (`-1`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::taxonomy::Taxonomy;
use crate::error::{Error, Result};
use crate::loss::IGNORE;
use crate::textfmt;

const FIXED_COLUMNS: [&str; 3] = ["path", "source", "frame"];
const UNKNOWN: &str = "Unknown";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: String,
    pub source: String,
    pub frame: u64,
    /// One entry per task, `-1` when missing.
    pub labels: Vec<i64>,
}

impl SampleRecord {
    pub fn label(&self, task: usize) -> i64 {
        self.labels[task]
    }

    pub fn resolve(&self, base: &Path) -> PathBuf {
        base.join(&self.path)
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<()> {
        if self.labels.len() != taxonomy.num_tasks() {
            return Err(Error::data(format!("`{}` has {} labels for {} tasks", self.path, self.labels.len(), taxonomy.num_tasks())));
        }
        for (l, t) in self.labels.iter().zip(&taxonomy.tasks) {
            if *l != IGNORE && !(0..t.num_classes() as i64).contains(l) {
                return Err(Error::data(format!("`{}`: label {l} outside `{}`", self.path, t.name)));
            }
        }
        Ok(())
    }
}

fn parse_label(cell: &str, task: &super::taxonomy::TaskSpec) -> std::result::Result<i64, String> {
    let cell = cell.trim();
    if cell.is_empty() || cell == UNKNOWN {
        return Ok(IGNORE);
    }
    if let Some(i) = task.class_index(cell) {
        return Ok(i as i64);
    }
    match cell.parse::<i64>() {
        Ok(IGNORE) => Ok(IGNORE),
        Ok(i) if (0..task.num_classes() as i64).contains(&i) => Ok(i),
        Ok(i) => Err(format!("index {i} outside 0..{} for `{}`", task.num_classes(), task.name)),
        Err(_) => Err(format!("unknown label `{cell}` for `{}`", task.name)),
    }
}

/// Class name, or the index when the name would read back differently.
fn format_label(label: i64, task: &super::taxonomy::TaskSpec) -> String {
    if label == IGNORE {
        return String::new();
    }
    let name = &task.classes[label as usize];
    if name == UNKNOWN || name.parse::<i64>().is_ok() {
        label.to_string()
    } else {
        name.clone()
    }
}

pub fn parse_manifest(text: &str, taxonomy: &Taxonomy) -> Result<Vec<SampleRecord>> {
    let header = textfmt::header("manifest");
    let body = match text.split_once('\n') {
        Some((h, rest)) if h.trim_end() == header => rest,
        _ => return Err(Error::Parse { line: 1, msg: format!("expected `{header}`") }),
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let columns: Vec<String> = reader.headers().map_err(|e| Error::Parse { line: 2, msg: e.to_string() })?.iter().map(|s| s.trim().to_string()).collect();
    let expected: Vec<&str> = FIXED_COLUMNS.iter().copied().chain(taxonomy.tasks.iter().map(|t| t.name.as_str())).collect();
    if columns != expected {
        return Err(Error::Parse { line: 2, msg: format!("header {columns:?} does not match {expected:?}") });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize + 1);
            Error::Parse { line, msg: e.to_string() }
        })?;
        // The reader starts counting at the CSV header; the format line sits above it.
        let line = row.position().map_or(0, |p| p.line() as usize + 1);
        let at = |msg: String| Error::data(format!("record at line {line}: {msg}"));
        let frame = row[2].trim().parse::<u64>().map_err(|_| at(format!("bad frame index `{}`", &row[2])))?;
        let labels = taxonomy.tasks.iter().enumerate().map(|(i, t)| parse_label(&row[3 + i], t).map_err(&at)).collect::<Result<Vec<_>>>()?;
        out.push(SampleRecord { path: row[0].trim().to_string(), source: row[1].trim().to_string(), frame, labels });
    }
    Ok(out)
}

pub fn write_manifest(records: &[SampleRecord], taxonomy: &Taxonomy) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = FIXED_COLUMNS.iter().copied().chain(taxonomy.tasks.iter().map(|t| t.name.as_str())).collect();
    let csv_err = |e: csv::Error| Error::data(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        r.validate(taxonomy)?;
        let mut row = vec![r.path.clone(), r.source.clone(), r.frame.to_string()];
        row.extend(r.labels.iter().zip(&taxonomy.tasks).map(|(&l, t)| format_label(l, t)));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
    let mut out = textfmt::header("manifest");
    out.push('\n');
    out.push_str(&String::from_utf8(bytes).expect("utf-8 input"));
    Ok(out)
}

pub fn read_manifest(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<SampleRecord>> {
    parse_manifest(&std::fs::read_to_string(path)?, taxonomy)
}

/// Labels of one task across records.
pub fn task_labels(records: &[SampleRecord], task: usize) -> Vec<i64> {
    records.iter().map(|r| r.labels[task]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(rows: &str) -> String {
        format!("#format wsty-manifest 1\npath,source,frame,Tint,Grain,Veil\n{rows}")
    }

    #[test]
    fn names_indices_and_missing() {
        let tax = Taxonomy::synthetic();
        let recs = parse_manifest(&doc("a.ppm,s1,4,Warm,2,Veiled\nb.ppm,s1,9,,Unknown,0\n"), &tax).unwrap();
        assert_eq!(recs[0].labels, [0, 2, 1]);
        assert_eq!(recs[1].labels, [-1, -1, 0]);
        assert_eq!(recs[1].frame, 9);
    }

    #[test]
    fn unknown_only_clears_its_task() {
        let tax = Taxonomy::weather_default();
        let g = tax.task_index("Ground Condition").unwrap();
        let mut cells: Vec<String> = tax.tasks.iter().map(|t| t.classes[1].clone()).collect();
        cells[g] = "Unknown".into();
        let header: Vec<&str> = ["path", "source", "frame"].into_iter().chain(tax.tasks.iter().map(|t| t.name.as_str())).collect();
        let text = format!("#format wsty-manifest 1\n{}\nx.ppm,v,0,{}\n", header.join(","), cells.join(","));
        let r = &parse_manifest(&text, &tax).unwrap()[0];
        for (i, &l) in r.labels.iter().enumerate() {
            assert_eq!(l, if i == g { -1 } else { 1 });
        }
    }

    #[test]
    fn bad_labels_report_their_line() {
        let tax = Taxonomy::synthetic();
        let err = parse_manifest(&doc("a.ppm,s1,0,Warm,0,0\nb.ppm,s1,1,Warm,7,0\n"), &tax).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains("line 4")), "{err}");
        let err = parse_manifest(&doc("a.ppm,s1,0,Purple,0,0\n"), &tax).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains("line 3") && m.contains("Purple")), "{err}");
        assert!(parse_manifest(&doc("a.ppm,s1,-2,Warm,0,0\n"), &tax).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let tax = Taxonomy::weather_default();
        let sky = tax.task_index("Sky Condition").unwrap();
        let mut labels = vec![-1i64; tax.num_tasks()];
        labels[sky] = 0; // the class literally named "Unknown"
        labels[0] = 7;
        let recs = vec![SampleRecord { path: "d/a b.ppm".into(), source: "v,1".into(), frame: 3, labels }];
        let text = write_manifest(&recs, &tax).unwrap();
        assert_eq!(parse_manifest(&text, &tax).unwrap(), recs);
    }
}

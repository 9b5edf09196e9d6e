//! Task/class taxonomy and its stanza file format.
//!
//! ```text
//! #format wsty-taxonomy 1
//! [Weather Type]
//! Clear
//! Sunny + Clear
//! [Viewpoint] auxiliary
//! Onboard Vehicle
//! ```
//!
//! Auxiliary tasks are annotated but do not count as weather attributes.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textfmt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub classes: Vec<String>,
    #[serde(default)]
    pub auxiliary: bool,
}

impl TaskSpec {
    pub fn new(name: &str, classes: &[&str]) -> Self {
        Self { name: name.into(), classes: classes.iter().map(|c| c.to_string()).collect(), auxiliary: false }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub tasks: Vec<TaskSpec>,
}

const WEATHER: &[(&str, &[&str])] = &[
    ("Weather Type", &["Clear", "Sunny + Clear", "Rain", "Snow", "Fog", "Fog + Rain", "Fog + Snow", "None"]),
    ("Weather Intensity", &["Low", "Medium", "High", "None"]),
    ("Visibility", &["Very Low", "Low", "Medium", "Good"]),
    ("Sky Condition", &["Unknown", "Clear Sky", "Partly Cloudy", "Cloudy", "Overcast", "Partly Overcast"]),
    ("Precipitation Presence", &["None", "Rain", "Snow", "Hail"]),
    ("Precipitation Intensity", &["None", "Low", "Medium", "High"]),
    ("Ground Condition", &["Dry", "Wet", "Partly Wet", "Snowy", "Partly Snowy", "Wet + Snowy", "Unknown"]),
    ("Glare / Reflections", &["Absent", "Present"]),
    ("Light Conditions", &["Day", "Night", "Sunset", "Sunrise", "Artificial Light"]),
    ("Water Spray", &["Absent", "Present"]),
    ("Water on Windshield", &["Absent", "Present", "None"]),
    ("Snow on Windshield", &["Absent", "Present", "None"]),
];

const VIEWPOINT: (&str, &[&str]) = ("Viewpoint", &["Onboard Vehicle", "Pedestrian", "Fixed Road Camera"]);

impl Taxonomy {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self> {
        let t = Self { tasks };
        t.validate()?;
        Ok(t)
    }

    /// The 13 annotated criteria of the weather corpus, in annotation order.
    pub fn weather_default() -> Self {
        let mut tasks: Vec<TaskSpec> = WEATHER.iter().map(|(n, c)| TaskSpec::new(n, c)).collect();
        tasks.push(TaskSpec { auxiliary: true, ..TaskSpec::new(VIEWPOINT.0, VIEWPOINT.1) });
        Self { tasks }
    }

    /// Tasks of the synthetic style dataset.
    pub fn synthetic() -> Self {
        Self {
            tasks: vec![
                TaskSpec::new("Tint", &["Warm", "Neutral", "Cool"]),
                TaskSpec::new("Grain", &["Fine", "Medium", "Coarse"]),
                TaskSpec::new("Veil", &["Clear", "Veiled"]),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("taxonomy has no tasks"));
        }
        let mut names = HashSet::new();
        for t in &self.tasks {
            if !names.insert(t.name.as_str()) {
                return Err(Error::config(format!("duplicate task `{}`", t.name)));
            }
            if t.classes.is_empty() {
                return Err(Error::config(format!("task `{}` has no classes", t.name)));
            }
            let mut seen = HashSet::new();
            if let Some(dup) = t.classes.iter().find(|c| !seen.insert(c.as_str())) {
                return Err(Error::config(format!("duplicate class `{dup}` in task `{}`", t.name)));
            }
        }
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_classes(&self) -> usize {
        self.tasks.iter().map(TaskSpec::num_classes).sum()
    }

    pub fn weather_tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().filter(|t| !t.auxiliary)
    }

    pub fn weather_classes(&self) -> usize {
        self.weather_tasks().map(TaskSpec::num_classes).sum()
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec> {
        self.task_index(name).map(|i| &self.tasks[i]).ok_or_else(|| Error::config(format!("unknown task `{name}`")))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.tasks.iter().map(TaskSpec::num_classes).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = textfmt::header("taxonomy");
        out.push('\n');
        for t in &self.tasks {
            out.push('[');
            out.push_str(&t.name);
            out.push(']');
            if t.auxiliary {
                out.push_str(" auxiliary");
            }
            out.push('\n');
            for c in &t.classes {
                out.push_str(c);
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = textfmt::header("taxonomy");
        match lines.next() {
            Some((_, h)) if h.trim_end() == header => {}
            _ => return Err(Error::Parse { line: 1, msg: format!("expected `{header}`") }),
        }
        let mut tasks: Vec<(TaskSpec, usize)> = Vec::new();
        let mut names = HashSet::new();
        for (i, raw) in lines {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let (name, tail) = rest.split_once(']').ok_or_else(|| Error::Parse { line, msg: "unclosed `[`".into() })?;
                let auxiliary = match tail.trim() {
                    "" => false,
                    "auxiliary" => true,
                    other => return Err(Error::Parse { line, msg: format!("unknown task marker `{other}`") }),
                };
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::Parse { line, msg: "empty task name".into() });
                }
                if !names.insert(name.to_string()) {
                    return Err(Error::Parse { line, msg: format!("duplicate task `{name}`") });
                }
                if let Some((prev, at)) = tasks.last() {
                    if prev.classes.is_empty() {
                        return Err(Error::Parse { line: *at, msg: format!("task `{}` has no classes", prev.name) });
                    }
                }
                tasks.push((TaskSpec { name: name.into(), classes: Vec::new(), auxiliary }, line));
                continue;
            }
            let (task, _) = tasks.last_mut().ok_or_else(|| Error::Parse { line, msg: "class before any `[task]`".into() })?;
            if task.classes.iter().any(|c| c == s) {
                return Err(Error::Parse { line, msg: format!("duplicate class `{s}` in task `{}`", task.name) });
            }
            task.classes.push(s.to_string());
        }
        match tasks.last() {
            None => return Err(Error::Parse { line: 1, msg: "no tasks".into() }),
            Some((t, at)) if t.classes.is_empty() => return Err(Error::Parse { line: *at, msg: format!("task `{}` has no classes", t.name) }),
            _ => {}
        }
        Ok(Self { tasks: tasks.into_iter().map(|(t, _)| t).collect() })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

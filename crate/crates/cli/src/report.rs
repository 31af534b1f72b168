//! Plain-text tables and the JSON envelope shared by all report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA: &str = "angleshrink-report/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema: String,
    pub kind: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub body: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &str, headers: &[&str]) -> Self {
        Self {
            title: title.into(),
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let cols = self.headers.len();
        let mut width: Vec<usize> = self.headers.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (c, cell) in r.iter().enumerate().take(cols) {
                width[c] = width[c].max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (c, w) in width.iter().enumerate() {
                let cell = cells.get(c).map_or("", String::as_str);
                if c > 0 {
                    s.push_str("  ");
                }
                let _ = write!(s, "{cell:<w$}");
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = format!("## {}\n\n", self.title);
        out += &line(&self.headers);
        out += &line(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
        for r in &self.rows {
            out += &line(r);
        }
        out
    }
}

pub fn f4(v: f64) -> String {
    format!("{v:.4}")
}

/// Write `<dir>/<kind>.json` and `<dir>/<kind>.txt`.
pub fn write_report<T: Serialize>(
    dir: &Path,
    kind: &str,
    config_hash: &str,
    seeds: &[u64],
    body: &T,
    tables: &[Table],
    notes: &[&str],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let envelope = Envelope {
        schema: REPORT_SCHEMA.into(),
        kind: kind.into(),
        config_hash: config_hash.into(),
        seeds: seeds.to_vec(),
        body,
    };
    let json_path = dir.join(format!("{kind}.json"));
    let mut json = serde_json::to_string_pretty(&envelope)?;
    json.push('\n');
    fs::write(&json_path, json).with_context(|| format!("cannot write {}", json_path.display()))?;

    let mut text = format!("# {kind}\nconfig {config_hash}\nseeds {seeds:?}\n\n");
    for t in tables {
        text += &t.render();
        text.push('\n');
    }
    for n in notes {
        text += n;
        text.push('\n');
    }
    let txt_path = dir.join(format!("{kind}.txt"));
    fs::write(&txt_path, text).with_context(|| format!("cannot write {}", txt_path.display()))?;
    Ok(vec![json_path, txt_path])
}

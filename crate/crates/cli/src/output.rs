use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

/// Where a command writes, plus the metadata embedded in every report.
pub struct Output {
    pub dir: PathBuf,
    pub config_hash: String,
    pub stamp: bool,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at_unix: Option<u64>,
    report: &'a T,
}

impl Output {
    pub fn new(dir: &Path, config_hash: String, stamp: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash,
            stamp,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn report<T: Serialize>(&self, name: &str, command: &str, report: &T) -> Result<PathBuf> {
        let generated_at_unix = self
            .stamp
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
        let env = Envelope {
            command,
            config_hash: &self.config_hash,
            generated_at_unix,
            report,
        };
        let mut json = serde_json::to_string_pretty(&env).context("serializing report")?;
        json.push('\n');
        self.write(name, &json)
    }
}

/// A CSV cell: text verbatim, floats with six fixed decimals.
pub enum Cell {
    Text(String),
    Int(usize),
    Float(f64),
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

pub fn csv(header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            match cell {
                Cell::Text(t) if t.contains([',', '"', '\n']) => {
                    write!(s, "\"{}\"", t.replace('"', "\"\"")).expect("writing to a String")
                }
                Cell::Text(t) => s.push_str(t),
                Cell::Int(v) => write!(s, "{v}").expect("writing to a String"),
                Cell::Float(v) => write!(s, "{v:.6}").expect("writing to a String"),
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_formatting() {
        let rows = vec![vec![Cell::from("a,b"), Cell::from(3usize), Cell::from(0.1234567)]];
        assert_eq!(csv(&["name", "n", "x"], &rows), "name,n,x\n\"a,b\",3,0.123457\n");
    }
}

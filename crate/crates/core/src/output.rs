//! Plain-text result files: field snapshots, reaction tables and timing tables.
//!
//! Every file starts with `#` header lines naming the tool version and the
//! scenario hash. Reaction and snapshot files are deterministic; wall-clock
//! timings live in their own table so reruns can be compared byte for byte.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::driver::{IncrementRow, SolverMode};
use crate::error::{Error, Result};
use crate::pixel::PixelGrid;
use crate::scalar::Scalar;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const FIELD_FORMAT: &str = "ifenn-field";
pub const FIELD_VERSION: u32 = 1;

pub const REACTION_FILE: &str = "reaction.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const SNAPSHOT_INDEX: &str = "index.csv";

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// A pixel map with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot<T> {
    pub increment: usize,
    /// `H`, `H_capped` or `phi`.
    pub field: String,
    pub units: String,
    pub config_hash: String,
    pub grid: PixelGrid<T>,
}

impl<T: Scalar> FieldSnapshot<T> {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {FIELD_FORMAT} {FIELD_VERSION}")?;
        writeln!(w, "# tool ifenn {TOOL_VERSION}")?;
        writeln!(w, "# config {}", self.config_hash)?;
        writeln!(w, "# field {}", self.field)?;
        writeln!(w, "# units {}", self.units)?;
        writeln!(w, "# increment {}", self.increment)?;
        self.grid.write_text(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.grid.values.len() * 14 + 256);
        self.write_to(&mut buf).expect("writing to memory");
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let (mut format, mut increment, mut field, mut units, mut config_hash) =
            (None, None, None, None, None);
        let mut line = String::new();
        loop {
            let buf = reader.fill_buf().map_err(|e| Error::io(path, e))?;
            if buf.first() != Some(&b'#') {
                break;
            }
            line.clear();
            reader
                .read_line(&mut line)
                .map_err(|e| Error::io(path, e))?;
            let mut parts = line[1..].trim().splitn(2, ' ');
            let key = parts.next().unwrap_or("");
            let value = parts.next().unwrap_or("").trim().to_string();
            match key {
                FIELD_FORMAT => format = Some(value),
                "config" => config_hash = Some(value),
                "field" => field = Some(value),
                "units" => units = Some(value),
                "increment" => {
                    increment = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| format_err(path, "bad increment"))?,
                    )
                }
                _ => {}
            }
        }
        match format.as_deref().map(str::parse::<u32>) {
            Some(Ok(FIELD_VERSION)) => {}
            Some(_) => return Err(format_err(path, "unsupported field snapshot version")),
            None => return Err(format_err(path, "missing field snapshot header")),
        }
        let grid = PixelGrid::read_text(reader).map_err(|e| format_err(path, e.to_string()))?;
        Ok(Self {
            increment: increment.ok_or_else(|| format_err(path, "missing increment"))?,
            field: field.ok_or_else(|| format_err(path, "missing field name"))?,
            units: units.unwrap_or_default(),
            config_hash: config_hash.unwrap_or_default(),
            grid,
        })
    }
}

pub fn snapshot_file_name(field: &str, increment: usize) -> String {
    format!("{field}_{increment:05}.txt")
}

/// One line of a reaction table as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionRow {
    pub increment: usize,
    pub displacement: f64,
    pub reaction: f64,
    pub max_phi: f64,
    pub mode: SolverMode,
    pub stag_iters: usize,
    pub tip_col: Option<usize>,
}

impl From<&IncrementRow> for ReactionRow {
    fn from(r: &IncrementRow) -> Self {
        Self {
            increment: r.increment,
            displacement: r.displacement,
            reaction: r.reaction,
            max_phi: r.max_phi,
            mode: r.mode,
            stag_iters: r.stag_iters,
            tip_col: r.tip_col,
        }
    }
}

const REACTION_HEADER: &str = "increment,u,F,max_phi,mode,stag_iters,tip_col";

fn header_lines(kind: &str, config_hash: &str) -> String {
    format!("# ifenn {TOOL_VERSION} {kind}\n# config {config_hash}\n")
}

pub fn write_reaction_csv(rows: &[IncrementRow], config_hash: &str, path: &Path) -> Result<()> {
    let mut s = header_lines("reaction", config_hash);
    s.push_str(REACTION_HEADER);
    s.push('\n');
    for r in rows {
        let tip = r.tip_col.map(|c| c.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{},{},{}\n",
            r.increment,
            r.displacement,
            r.reaction,
            r.max_phi,
            r.mode.name(),
            r.stag_iters,
            tip
        ));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_reaction_csv(path: &Path) -> Result<Vec<ReactionRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(REACTION_HEADER) {
        return Err(format_err(
            path,
            format!("expected column header {REACTION_HEADER:?}"),
        ));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || format_err(path, format!("malformed data row {}: {line:?}", i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
        rows.push(ReactionRow {
            increment: int(f[0])?,
            displacement: num(f[1])?,
            reaction: num(f[2])?,
            max_phi: num(f[3])?,
            mode: match f[4] {
                "fem" => SolverMode::Fem,
                "ifenn" => SolverMode::Ifenn,
                _ => return Err(bad()),
            },
            stag_iters: int(f[5])?,
            tip_col: if f[6].is_empty() {
                None
            } else {
                Some(int(f[6])?)
            },
        });
    }
    Ok(rows)
}

/// Per-increment wall-clock seconds; not reproducible by nature.
pub fn write_timing_csv(rows: &[IncrementRow], config_hash: &str, path: &Path) -> Result<()> {
    let mut s = header_lines("timing", config_hash);
    s.push_str("increment,mode,t_equilibrium,t_phase,t_total\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            r.increment,
            r.mode.name(),
            r.t_equilibrium,
            r.t_phase,
            r.t_total
        ));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub increment: usize,
    pub field: String,
    /// File name relative to the snapshot directory.
    pub file: String,
}

pub fn write_snapshot_index(entries: &[IndexEntry], config_hash: &str, path: &Path) -> Result<()> {
    let mut s = header_lines("snapshots", config_hash);
    s.push_str("increment,field,file\n");
    for e in entries {
        s.push_str(&format!("{},{},{}\n", e.increment, e.field, e.file));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot_index(path: &Path) -> Result<Vec<IndexEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let increment = f.first().and_then(|s| s.parse().ok());
        match (increment, f.len()) {
            (Some(increment), 3) => out.push(IndexEntry {
                increment,
                field: f[1].into(),
                file: f[2].into(),
            }),
            _ => return Err(format_err(path, format!("malformed index row {line:?}"))),
        }
    }
    Ok(out)
}

/// Snapshot path for `field` at `increment` inside a result directory, if indexed.
pub fn find_snapshot(dir: &Path, field: &str, increment: usize) -> Result<Option<PathBuf>> {
    let index = dir.join(SNAPSHOT_DIR).join(SNAPSHOT_INDEX);
    if !index.exists() {
        return Ok(None);
    }
    Ok(read_snapshot_index(&index)?
        .into_iter()
        .find(|e| e.field == field && e.increment == increment)
        .map(|e| dir.join(SNAPSHOT_DIR).join(e.file)))
}

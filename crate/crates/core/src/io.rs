//! CSV emission with a fixed numeric format, so identical runs produce
//! byte-identical files.

use std::fs;
use std::path::Path;

use crate::error::Result;

/// 12 significant digits in scientific notation; NaN prints as an empty
/// field.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.11e}")
    }
}

/// One CSV cell, either textual or numeric.
#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

fn render(cell: &Cell) -> String {
    match cell {
        Cell::Int(v) => v.to_string(),
        Cell::Float(v) => format_float(*v),
        Cell::Text(v) => v.clone(),
    }
}

/// Writes header + rows with `\n` terminators, creating parent directories.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let fields: Vec<String> = row.iter().map(render).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

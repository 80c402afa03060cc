//! File helpers: `-` means stdin or stdout.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn read_to_string(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).context("reading stdin")?;
        return Ok(s);
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn open_output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) if p != Path::new("-") => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        _ => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_to_string(path)?;
    let rows = edittraj_core::dataset::read_jsonl(BufReader::new(text.as_bytes()))
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(rows)
}

pub fn write_lines<T: Serialize>(out: &mut dyn Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(out: &mut dyn Write, item: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, item)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// True for a file with nothing but whitespace, which counts as an empty table.
pub fn is_blank(text: &str) -> bool {
    text.trim().is_empty()
}

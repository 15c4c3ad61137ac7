//! Output formatting shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::Result;

pub const MISSING: &str = "insufficient data";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| MISSING.into())
}

/// JSON number, or a string for values JSON cannot represent.
pub fn jnum(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(num(x))
    }
}

pub fn opt_jnum(x: Option<f64>) -> Value {
    x.map(jnum).unwrap_or_else(|| json!(MISSING))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

/// Writes tables and documents stamped with the config hash and seed.
pub struct Writer {
    pub dir: PathBuf,
    pub format: Format,
    pub config_hash: String,
    pub seed: u64,
}

impl Writer {
    pub fn new(dir: &Path, format: Format, config_hash: String, seed: u64) -> Result<Writer> {
        fs::create_dir_all(dir)?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            format,
            config_hash,
            seed,
        })
    }

    /// CSV with leading `config_hash` and `seed` columns.
    pub fn table(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        if !self.format.csv() {
            return Ok(());
        }
        self.raw_table(name, header, rows, true)
    }

    /// CSV written whatever the format flag says.
    pub fn raw_table(&self, name: &str, header: &[&str], rows: &[Vec<String>], stamp: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        let seed = self.seed.to_string();
        let mut h: Vec<&str> = Vec::with_capacity(header.len() + 2);
        if stamp {
            h.extend(["config_hash", "seed"]);
        }
        h.extend(header);
        w.write_record(&h)?;
        for row in rows {
            let mut r: Vec<&str> = Vec::with_capacity(row.len() + 2);
            if stamp {
                r.extend([self.config_hash.as_str(), seed.as_str()]);
            }
            r.extend(row.iter().map(String::as_str));
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn document(&self, name: &str, body: Value) -> Result<()> {
        if !self.format.json() {
            return Ok(());
        }
        self.raw_document(name, body)
    }

    pub fn raw_document(&self, name: &str, mut body: Value) -> Result<()> {
        if let Value::Object(map) = &mut body {
            map.insert("config_hash".into(), json!(self.config_hash));
            map.insert("seed".into(), json!(self.seed));
        }
        let mut text = serde_json::to_string_pretty(&body)?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.5e-300, -7.0, 0.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(opt_num(None), MISSING);
        assert_eq!(num(f64::INFINITY), "inf");
    }
}

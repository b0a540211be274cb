//! Manifest and CSV emission.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ibflab_core::model::CovarianceSummary;
use serde::Serialize;

use crate::config::RunConfig;

/// Round-trip decimal form with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub experiment: String,
    pub config: RunConfig,
    pub moduli: CovarianceSummary,
    pub model_notes: Vec<&'static str>,
    /// Wall time in seconds per experiment; the only nondeterministic field.
    pub wall_time: BTreeMap<String, f64>,
}

pub const MODEL_NOTES: [&str; 2] = [
    "finite cosine mode sum: b(x) does not decay as |x| grows",
    "isotropy is exact only under rotations by multiples of 2*pi/L; see isotropy_defect",
];

pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn write_manifest(&self, m: &RunManifest) -> io::Result<()> {
        let text = serde_json::to_string_pretty(m).map_err(io::Error::other)?;
        fs::write(self.root.join("manifest.json"), text + "\n")
    }

    pub fn write_table(&self, name: &str, t: &Table) -> io::Result<()> {
        t.write(&self.root.join(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.replace('.', "").len(), 17);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }
}

//! Study tables and their CSV form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{fmt_sig9, round_sig9, Array};
use crate::world::World;

use super::metrics::{nearest_identity, MetricsReport};
use super::study::{Curve, SwapItem};

pub const STUDY_HEADER: &str = "variant,id_retrieval,exp_error,pose_analog,mse,seed,steps";

/// One variant's metrics. Values are stored already rounded to the nine
/// significant digits the CSV keeps, so a parsed report equals the original.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub variant: String,
    pub metrics: MetricsReport,
    pub seed: u64,
    pub steps: usize,
}

impl StudyRow {
    pub fn new(variant: &str, m: MetricsReport, seed: u64, steps: usize) -> Result<Self> {
        if variant.is_empty() || variant.contains([',', '"', '\n', '\r']) {
            return Err(Error::Csv(format!("variant label {variant:?} is not CSV-safe")));
        }
        Ok(Self {
            variant: variant.to_string(),
            metrics: MetricsReport {
                id_retrieval: round_sig9(m.id_retrieval),
                exp_error: round_sig9(m.exp_error),
                pose_error: round_sig9(m.pose_error),
                mse: round_sig9(m.mse),
            },
            seed,
            steps,
        })
    }

    fn values(&self) -> [f64; 4] {
        let m = &self.metrics;
        [m.id_retrieval, m.exp_error, m.pose_error, m.mse]
    }
}

/// Bitwise on the metrics, so failed (NaN) rows compare equal to themselves.
impl PartialEq for StudyRow {
    fn eq(&self, other: &Self) -> bool {
        self.variant == other.variant
            && self.seed == other.seed
            && self.steps == other.steps
            && self.values().iter().zip(other.values()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Rows keyed by variant label plus the hash of the generating config.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub config_hash: Option<u64>,
}

impl StudyReport {
    pub fn new(rows: Vec<StudyRow>, config_hash: Option<u64>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if rows[..i].iter().any(|o| o.variant == r.variant) {
                return Err(Error::Csv(format!("variant '{}' appears twice", r.variant)));
            }
        }
        Ok(Self { rows, config_hash })
    }

    pub fn row(&self, variant: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{STUDY_HEADER}\n");
        for r in &self.rows {
            let v = r.values();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.variant,
                fmt_sig9(v[0]),
                fmt_sig9(v[1]),
                fmt_sig9(v[2]),
                fmt_sig9(v[3]),
                r.seed,
                r.steps
            );
        }
        out
    }

    /// Parse the CSV form; the config hash comes from the sidecar, if any.
    pub fn from_csv(text: &str, config_hash: Option<u64>) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(STUDY_HEADER) {
            return Err(Error::Csv(format!("expected header '{STUDY_HEADER}'")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(Error::Csv(format!("row {}: expected 7 fields, got {}", i + 1, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Csv(format!("row {}: bad number '{s}'", i + 1)));
            let m = MetricsReport {
                id_retrieval: num(f[1])?,
                exp_error: num(f[2])?,
                pose_error: num(f[3])?,
                mse: num(f[4])?,
            };
            let seed = f[5].parse().map_err(|_| Error::Csv(format!("row {}: bad seed", i + 1)))?;
            let steps = f[6].parse().map_err(|_| Error::Csv(format!("row {}: bad steps", i + 1)))?;
            rows.push(StudyRow::new(f[0], m, seed, steps)?);
        }
        Self::new(rows, config_hash)
    }

    /// Sidecar text carrying the metadata the CSV schema has no column for.
    pub fn meta(&self) -> String {
        match self.config_hash {
            Some(h) => format!("config_hash = {h:016x}\n"),
            None => String::new(),
        }
    }

    pub fn parse_meta(text: &str) -> Result<Option<u64>> {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() == "config_hash" {
                    return u64::from_str_radix(v.trim(), 16)
                        .map(Some)
                        .map_err(|_| Error::Csv(format!("bad config hash '{}'", v.trim())));
                }
            }
        }
        Ok(None)
    }
}

/// `variant,step,recon_mse` for every curve point.
pub fn curves_csv(curves: &[&Curve]) -> String {
    let mut out = String::from("variant,step,recon_mse\n");
    for c in curves {
        for (step, v) in &c.points {
            let _ = writeln!(out, "{},{},{}", c.variant, step, fmt_sig9(*v));
        }
    }
    out
}

/// Generated swaps: `sample,intended_id,retrieved_id,x0,…,x{D-1}`.
pub fn samples_csv(world: &World, items: &[SwapItem], gen: &[Array]) -> Result<String> {
    let d = world.dim();
    let mut out = String::from("sample,intended_id,retrieved_id");
    for j in 0..d {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for (i, (it, g)) in items.iter().zip(gen).enumerate() {
        let _ = write!(out, "{},{},{}", i, it.id_src.id_class, nearest_identity(world, g)?);
        for v in g.as_slice() {
            let _ = write!(out, ",{}", fmt_sig9(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

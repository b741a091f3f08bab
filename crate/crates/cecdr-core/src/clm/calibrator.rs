//! Empirical-CDF calibration of similarity scores.
//!
//! Content and behavior similarities live on incomparable scales; each is
//! mapped to its rank quantile within a sample of observed cross-domain
//! pairs. Convention: F(x) = (#samples ≤ x) / M, right-continuous, so
//! F(max sample) = 1.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::data::{dot, EmbeddingTable, InteractionLog};
use crate::error::{CecdrError, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug)]
pub struct SimilarityCalibrator {
    content: Vec<f64>,
    behavior: Vec<f64>,
}

pub const MIN_CALIBRATION_PAIRS: usize = 1000;

fn ecdf(sorted: &[f64], x: f64) -> f64 {
    let idx = sorted.partition_point(|&s| s <= x);
    idx as f64 / sorted.len() as f64
}

impl SimilarityCalibrator {
    /// Build directly from raw similarity samples (sorted internally).
    pub fn from_samples(mut content: Vec<f64>, mut behavior: Vec<f64>) -> Result<Self> {
        if content.is_empty() || behavior.is_empty() {
            return Err(CecdrError::Invalid("calibrator samples must be nonempty".into()));
        }
        content.sort_by(|a, b| a.partial_cmp(b).unwrap());
        behavior.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(SimilarityCalibrator { content, behavior })
    }

    pub fn sample_count(&self) -> usize {
        self.content.len()
    }

    pub fn calibrate_content(&self, x: f64) -> f64 {
        ecdf(&self.content, x)
    }

    pub fn calibrate_behavior(&self, x: f64) -> f64 {
        ecdf(&self.behavior, x)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let fmt = |vals: &[f64]| {
            vals.iter().map(|v| crate::checkpoint::format_f64(*v)).collect::<Vec<_>>().join(" ")
        };
        let text = format!(
            "cecdr-calibrator v1 {}\n{}\n{}\n",
            self.content.len(),
            fmt(&self.content),
            fmt(&self.behavior)
        );
        fs::write(path, text).map_err(|e| CecdrError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CecdrError::io(path.display().to_string(), e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CecdrError::Input(format!("{}: empty calibrator file", path.display())))?;
        if !header.starts_with("cecdr-calibrator v1") {
            return Err(CecdrError::Input(format!("{}: bad calibrator header", path.display())));
        }
        let parse = |line: Option<&str>| -> Result<Vec<f64>> {
            line.ok_or_else(|| CecdrError::Input(format!("{}: truncated calibrator", path.display())))?
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        CecdrError::Input(format!("{}: bad calibrator value '{t}'", path.display()))
                    })
                })
                .collect()
        };
        let content = parse(lines.next())?;
        let behavior = parse(lines.next())?;
        SimilarityCalibrator::from_samples(content, behavior)
    }
}

/// Outcome of fitting: the calibrator plus whether the candidate pool was
/// smaller than requested (sampled with replacement).
pub struct CalibratorFit {
    pub calibrator: SimilarityCalibrator,
    pub with_replacement: bool,
    pub candidate_pairs: usize,
}

/// Sample M cross-domain (source-before-target) co-occurring pairs uniformly
/// from user histories and record both raw similarities.
pub fn fit_calibrator(
    log: &InteractionLog,
    content: &EmbeddingTable,
    behavior: &EmbeddingTable,
    m: usize,
    seed: u64,
) -> Result<CalibratorFit> {
    if m < MIN_CALIBRATION_PAIRS {
        return Err(CecdrError::Config(format!(
            "calibration sample size {m} below the minimum {MIN_CALIBRATION_PAIRS}"
        )));
    }
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for h in log.histories() {
        for &(src, src_ts) in &h.source {
            for &(tgt, tgt_ts) in &h.target {
                if src_ts < tgt_ts {
                    pairs.push((src, log.global_item(crate::data::Domain::Target, tgt)));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(CecdrError::Input("no co-occurring cross-domain pairs to calibrate on".into()));
    }
    let mut rng = stream(seed, Stream::Calibrator, 0);
    let with_replacement = pairs.len() < m;
    let chosen: Vec<(u32, u32)> = if with_replacement {
        eprintln!(
            "warning: only {} candidate pairs for a calibration sample of {m}; sampling with replacement",
            pairs.len()
        );
        (0..m).map(|_| pairs[rng.random_range(0..pairs.len())]).collect()
    } else {
        // partial Fisher-Yates for m distinct picks
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        for i in 0..m {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..m].iter().map(|&i| pairs[i]).collect()
    };
    let mut c_samples = Vec::with_capacity(m);
    let mut b_samples = Vec::with_capacity(m);
    for (src, tgt_global) in chosen {
        c_samples.push(dot(content.require(src)?, content.require(tgt_global)?));
        b_samples.push(dot(behavior.require(src)?, behavior.require(tgt_global)?));
    }
    Ok(CalibratorFit {
        calibrator: SimilarityCalibrator::from_samples(c_samples, b_samples)?,
        with_replacement,
        candidate_pairs: pairs.len(),
    })
}

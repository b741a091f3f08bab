//! Causality-aware dataset construction.
//!
//! For every (user, target interaction) the snapshot is the user's source
//! interactions strictly before that interaction, truncated to the latest
//! `l_max`. The observed label s fires when the calibrated, max-fused
//! sequence similarity strictly exceeds tau. Examples with empty snapshots
//! are dropped (cold-start users contribute nothing).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{dot, Domain, EmbeddingTable, GroundTruth, InteractionLog, Space};
use crate::error::{CecdrError, Result};

use super::calibrator::SimilarityCalibrator;

#[derive(Clone, Debug)]
pub struct LabelingConfig {
    /// Positive-label threshold on fused similarity, in [0, 1).
    pub tau: f64,
    /// Snapshot length cap; the most recent items are kept.
    pub l_max: usize,
    pub use_content: bool,
    pub use_behavior: bool,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig { tau: 0.9, l_max: 50, use_content: true, use_behavior: true }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(CecdrError::Config(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if self.l_max == 0 {
            return Err(CecdrError::Config("l_max must be positive".into()));
        }
        if !self.use_content && !self.use_behavior {
            return Err(CecdrError::Config("at least one similarity space must be enabled".into()));
        }
        Ok(())
    }
}

/// One (user, source-sequence snapshot, target item) example. Snapshot item
/// ids are source-domain local, oldest first. `y` is generator ground truth,
/// available on synthetic worlds only.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalExample {
    pub user: u32,
    pub snapshot: Vec<u32>,
    pub target_item: u32,
    pub s: bool,
    pub score: f64,
    pub ts: u32,
    pub y: Option<bool>,
}

/// Raw similarity in one space: the plain dot product.
pub fn raw_similarity(
    space: Space,
    table: &EmbeddingTable,
    src_global: u32,
    tgt_global: u32,
) -> Result<f64> {
    debug_assert_eq!(space, table.space);
    Ok(dot(table.require(src_global)?, table.require(tgt_global)?))
}

/// Context for similarity scoring: both tables, the calibrator, and which
/// spaces participate in the fusion.
pub struct Scorer<'a> {
    pub calibrator: &'a SimilarityCalibrator,
    pub content: &'a EmbeddingTable,
    pub behavior: &'a EmbeddingTable,
    pub use_content: bool,
    pub use_behavior: bool,
}

impl<'a> Scorer<'a> {
    pub fn new(
        calibrator: &'a SimilarityCalibrator,
        content: &'a EmbeddingTable,
        behavior: &'a EmbeddingTable,
        cfg: &LabelingConfig,
    ) -> Self {
        Scorer {
            calibrator,
            content,
            behavior,
            use_content: cfg.use_content,
            use_behavior: cfg.use_behavior,
        }
    }

    /// Calibrated quantiles in both spaces for one cross-domain item pair.
    pub fn pair_quantiles(&self, src_global: u32, tgt_global: u32) -> Result<(f64, f64)> {
        let c = self
            .calibrator
            .calibrate_content(raw_similarity(Space::Content, self.content, src_global, tgt_global)?);
        let b = self.calibrator.calibrate_behavior(raw_similarity(
            Space::Behavior,
            self.behavior,
            src_global,
            tgt_global,
        )?);
        Ok((c, b))
    }

    /// Max-fused calibrated similarity over the enabled spaces.
    pub fn fused(&self, src_global: u32, tgt_global: u32) -> Result<f64> {
        let (c, b) = self.pair_quantiles(src_global, tgt_global)?;
        Ok(match (self.use_content, self.use_behavior) {
            (true, true) => c.max(b),
            (true, false) => c,
            (false, true) => b,
            (false, false) => unreachable!("validated by LabelingConfig"),
        })
    }

    /// Max over snapshot items; an empty snapshot scores 0.
    pub fn sequence(&self, snapshot_globals: &[u32], tgt_global: u32) -> Result<f64> {
        let mut best = 0.0f64;
        for &src in snapshot_globals {
            best = best.max(self.fused(src, tgt_global)?);
        }
        Ok(best)
    }

    /// Per-space sequence maxima (content, behavior), used by the heatmap
    /// diagnostics regardless of which spaces label the dataset.
    pub fn sequence_space_quantiles(
        &self,
        snapshot_globals: &[u32],
        tgt_global: u32,
    ) -> Result<(f64, f64)> {
        let (mut cbest, mut bbest) = (0.0f64, 0.0f64);
        for &src in snapshot_globals {
            let (c, b) = self.pair_quantiles(src, tgt_global)?;
            cbest = cbest.max(c);
            bbest = bbest.max(b);
        }
        Ok((cbest, bbest))
    }
}

/// Build the causality-aware dataset over every user and target interaction.
pub fn build_dataset(
    log: &InteractionLog,
    scorer: &Scorer<'_>,
    cfg: &LabelingConfig,
    truth: Option<&GroundTruth>,
) -> Result<Vec<CausalExample>> {
    cfg.validate()?;
    let truth_idx = truth.map(|t| t.index());
    let histories = log.histories();
    let per_user: Vec<Result<Vec<CausalExample>>> = histories
        .par_iter()
        .enumerate()
        .map(|(uid, h)| {
            let mut out = Vec::new();
            for &(tgt_item, tgt_ts) in &h.target {
                let mut snapshot: Vec<u32> = h
                    .source
                    .iter()
                    .filter(|&&(_, src_ts)| src_ts < tgt_ts)
                    .map(|&(item, _)| item)
                    .collect();
                if snapshot.is_empty() {
                    continue;
                }
                if snapshot.len() > cfg.l_max {
                    snapshot.drain(..snapshot.len() - cfg.l_max);
                }
                let tgt_global = log.global_item(Domain::Target, tgt_item);
                let score = scorer.sequence(&snapshot, tgt_global)?;
                let y = truth_idx.as_ref().and_then(|t| t.get(&(uid as u32, tgt_ts))).map(|r| r.y);
                out.push(CausalExample {
                    user: uid as u32,
                    snapshot,
                    target_item: tgt_item,
                    s: score > cfg.tau,
                    score,
                    ts: tgt_ts,
                    y,
                });
            }
            Ok(out)
        })
        .collect();
    let mut examples = Vec::new();
    for chunk in per_user {
        examples.extend(chunk?);
    }
    Ok(examples)
}

pub const EXAMPLES_HEADER: &str = "user\ttarget_item\ts\tscore\tsnapshot";

pub fn export_examples(examples: &[CausalExample], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(EXAMPLES_HEADER);
    out.push('\n');
    for e in examples {
        let snapshot: Vec<String> = e.snapshot.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            e.user,
            e.target_item,
            e.s as u8,
            crate::checkpoint::format_f64(e.score),
            snapshot.join(",")
        );
    }
    fs::write(path, out).map_err(|e| CecdrError::io(path.display().to_string(), e))
}

pub fn import_examples(path: &Path) -> Result<Vec<CausalExample>> {
    let text = fs::read_to_string(path).map_err(|e| CecdrError::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == EXAMPLES_HEADER => {}
        other => {
            return Err(CecdrError::Input(format!(
                "{}: expected header '{EXAMPLES_HEADER}', got {other:?}",
                path.display()
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fail = || CecdrError::Input(format!("{}: bad example on line {}", path.display(), i + 2));
        let mut cols = line.split('\t');
        let user: u32 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(fail)?;
        let target_item: u32 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(fail)?;
        let s = match cols.next().ok_or_else(fail)? {
            "0" => false,
            "1" => true,
            _ => return Err(fail()),
        };
        let score: f64 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(fail)?;
        let snapshot: Vec<u32> = cols
            .next()
            .ok_or_else(fail)?
            .split(',')
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| fail())?;
        if snapshot.is_empty() {
            return Err(fail());
        }
        out.push(CausalExample { user, snapshot, target_item, s, score, ts: 0, y: None });
    }
    Ok(out)
}

/// Precision of the similarity labels against generator ground truth:
/// P(y = 1 | s = 1). Returns None when no positives carry ground truth.
pub fn label_precision(examples: &[CausalExample]) -> Option<f64> {
    let mut pos = 0usize;
    let mut hits = 0usize;
    for e in examples {
        if e.s {
            if let Some(y) = e.y {
                pos += 1;
                hits += y as usize;
            }
        }
    }
    if pos == 0 {
        None
    } else {
        Some(hits as f64 / pos as f64)
    }
}

//! Core data types shared across the pipeline: interaction logs, ground
//! truth, and embedding tables, together with their on-disk text formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CecdrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Source => "S",
            Domain::Target => "T",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "S" => Ok(Domain::Source),
            "T" => Ok(Domain::Target),
            other => Err(CecdrError::Input(format!("unknown domain tag '{other}'"))),
        }
    }
}

/// One timestamped user-item event. Timestamps are dense integer ticks;
/// only relative order matters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub domain: Domain,
    pub item: u32,
    pub ts: u32,
}

/// Timestamped events for a two-domain world, sorted by (user, ts).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
    pub users: u32,
    pub source_items: u32,
    pub target_items: u32,
}

/// Per-user event sequences split by domain, each ordered by timestamp.
#[derive(Clone, Debug, Default)]
pub struct UserHistory {
    pub source: Vec<(u32, u32)>, // (item, ts)
    pub target: Vec<(u32, u32)>,
}

impl InteractionLog {
    /// Item id in the merged catalog (source items first).
    pub fn global_item(&self, domain: Domain, item: u32) -> u32 {
        match domain {
            Domain::Source => item,
            Domain::Target => self.source_items + item,
        }
    }

    pub fn total_items(&self) -> u32 {
        self.source_items + self.target_items
    }

    pub fn histories(&self) -> Vec<UserHistory> {
        let mut out = vec![UserHistory::default(); self.users as usize];
        for r in &self.records {
            let h = &mut out[r.user as usize];
            match r.domain {
                Domain::Source => h.source.push((r.item, r.ts)),
                Domain::Target => h.target.push((r.item, r.ts)),
            }
        }
        for h in &mut out {
            h.source.sort_by_key(|&(_, ts)| ts);
            h.target.sort_by_key(|&(_, ts)| ts);
        }
        out
    }

    /// Validates the per-(user, domain) strictly-increasing timestamp
    /// invariant and item-id ranges.
    pub fn validate(&self) -> Result<()> {
        let mut last: Vec<[Option<u32>; 2]> = vec![[None, None]; self.users as usize];
        let mut sorted = self.records.clone();
        sorted.sort_by_key(|r| (r.user, r.ts));
        for r in &sorted {
            if r.user >= self.users {
                return Err(CecdrError::Input(format!("user {} out of range", r.user)));
            }
            let limit = match r.domain {
                Domain::Source => self.source_items,
                Domain::Target => self.target_items,
            };
            if r.item >= limit {
                return Err(CecdrError::Input(format!(
                    "item {} out of range for domain {}",
                    r.item,
                    r.domain.tag()
                )));
            }
            let slot = &mut last[r.user as usize][(r.domain == Domain::Target) as usize];
            if let Some(prev) = *slot {
                if r.ts <= prev {
                    return Err(CecdrError::Input(format!(
                        "timestamps not strictly increasing for user {} domain {}",
                        r.user,
                        r.domain.tag()
                    )));
                }
            }
            *slot = Some(r.ts);
        }
        Ok(())
    }
}

pub const LOG_HEADER: &str = "user\tdomain\titem\tts";

pub fn export_log(log: &InteractionLog, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(log.records.len() * 16 + 32);
    out.push_str(LOG_HEADER);
    out.push('\n');
    for r in &log.records {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.user, r.domain.tag(), r.item, r.ts);
    }
    fs::write(path, out).map_err(|e| CecdrError::io(path.display().to_string(), e))
}

pub fn import_log(path: &Path, users: u32, source_items: u32, target_items: u32) -> Result<InteractionLog> {
    let text = fs::read_to_string(path).map_err(|e| CecdrError::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == LOG_HEADER => {}
        other => {
            return Err(CecdrError::Input(format!(
                "{}: expected header '{LOG_HEADER}', got {other:?}",
                path.display()
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let parse_fail = || CecdrError::Input(format!("{}: bad record on line {}", path.display(), i + 2));
        let user: u32 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(parse_fail)?;
        let domain = Domain::from_tag(cols.next().ok_or_else(parse_fail)?)?;
        let item: u32 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(parse_fail)?;
        let ts: u32 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(parse_fail)?;
        records.push(Interaction { user, domain, item, ts });
    }
    let log = InteractionLog { records, users, source_items, target_items };
    log.validate()?;
    Ok(log)
}

/// Ground-truth causality for one target-domain interaction. `cause_item`
/// is the source item that caused it, present exactly when `y` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TruthRecord {
    pub user: u32,
    pub ts: u32,
    pub y: bool,
    pub cause_item: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub records: Vec<TruthRecord>,
}

impl GroundTruth {
    /// Lookup table keyed by (user, ts).
    pub fn index(&self) -> std::collections::HashMap<(u32, u32), TruthRecord> {
        self.records.iter().map(|r| ((r.user, r.ts), *r)).collect()
    }

    pub fn causal_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.y).count() as f64 / self.records.len() as f64
    }
}

pub const TRUTH_HEADER: &str = "user\tts\ty\tcause_item";

pub fn export_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(TRUTH_HEADER);
    out.push('\n');
    for r in &truth.records {
        let cause = r.cause_item.map(|c| c.to_string()).unwrap_or_else(|| "-".to_string());
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.user, r.ts, r.y as u8, cause);
    }
    fs::write(path, out).map_err(|e| CecdrError::io(path.display().to_string(), e))
}

pub fn import_truth(path: &Path) -> Result<GroundTruth> {
    let text = fs::read_to_string(path).map_err(|e| CecdrError::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRUTH_HEADER => {}
        other => {
            return Err(CecdrError::Input(format!(
                "{}: expected header '{TRUTH_HEADER}', got {other:?}",
                path.display()
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let parse_fail = || CecdrError::Input(format!("{}: bad record on line {}", path.display(), i + 2));
        let user: u32 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(parse_fail)?;
        let ts: u32 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(parse_fail)?;
        let y = match cols.next().ok_or_else(parse_fail)? {
            "0" => false,
            "1" => true,
            _ => return Err(parse_fail()),
        };
        let cause_item = match cols.next().ok_or_else(parse_fail)? {
            "-" => None,
            s => Some(s.parse::<u32>().map_err(|_| parse_fail())?),
        };
        if y != cause_item.is_some() {
            return Err(CecdrError::Input(format!(
                "{}: line {}: cause_item must be present exactly when y=1",
                path.display(),
                i + 2
            )));
        }
        records.push(TruthRecord { user, ts, y, cause_item });
    }
    Ok(GroundTruth { records })
}

// ---- embedding tables -----------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Content,
    Behavior,
}

impl Space {
    pub fn tag(self) -> &'static str {
        match self {
            Space::Content => "content",
            Space::Behavior => "behavior",
        }
    }
}

/// Id-indexed dense vectors over the merged item catalog.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub space: Space,
    pub dim: usize,
    vecs: Vec<Option<Vec<f64>>>,
}

impl EmbeddingTable {
    pub fn new(space: Space, dim: usize, slots: usize) -> Self {
        EmbeddingTable { space, dim, vecs: vec![None; slots] }
    }

    pub fn insert(&mut self, id: u32, vec: Vec<f64>) -> Result<()> {
        if vec.len() != self.dim {
            return Err(CecdrError::Input(format!(
                "embedding for item {id} has dim {}, table expects {}",
                vec.len(),
                self.dim
            )));
        }
        if !vec.iter().all(|v| v.is_finite()) {
            return Err(CecdrError::Input(format!("non-finite embedding for item {id}")));
        }
        if id as usize >= self.vecs.len() {
            self.vecs.resize(id as usize + 1, None);
        }
        self.vecs[id as usize] = Some(vec);
        Ok(())
    }

    pub fn get(&self, id: u32) -> Option<&[f64]> {
        self.vecs.get(id as usize).and_then(|v| v.as_deref())
    }

    pub fn require(&self, id: u32) -> Result<&[f64]> {
        self.get(id).ok_or(CecdrError::MissingItem {
            item: id,
            space: self.space.tag(),
        })
    }

    pub fn len(&self) -> usize {
        self.vecs.iter().filter(|v| v.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.vecs.iter().enumerate().filter(|(_, v)| v.is_some()).map(|(i, _)| i as u32)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", self.len(), self.dim, self.space.tag());
        for id in self.ids() {
            let _ = write!(out, "{id}");
            for v in self.get(id).unwrap() {
                let _ = write!(out, " {}", crate::checkpoint::format_f64(*v));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| CecdrError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CecdrError::io(path.display().to_string(), e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CecdrError::Input(format!("{}: empty embedding file", path.display())))?;
        let mut parts = header.split_whitespace();
        let bad_header =
            || CecdrError::Input(format!("{}: bad embedding header '{header}'", path.display()));
        let count: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad_header)?;
        let dim: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad_header)?;
        let space = match parts.next().ok_or_else(bad_header)? {
            "content" => Space::Content,
            "behavior" => Space::Behavior,
            _ => return Err(bad_header()),
        };
        let mut table = EmbeddingTable::new(space, dim, count);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let parse_fail =
                || CecdrError::Input(format!("{}: bad embedding row on line {}", path.display(), i + 2));
            let id: u32 = toks.next().and_then(|s| s.parse().ok()).ok_or_else(parse_fail)?;
            let vec: Vec<f64> = toks
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_fail())?;
            table.insert(id, vec)?;
        }
        if table.len() != count {
            return Err(CecdrError::Input(format!(
                "{}: header declares {count} items, found {}",
                path.display(),
                table.len()
            )));
        }
        Ok(table)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}
